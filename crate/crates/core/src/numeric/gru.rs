//! GRU cell. Gate rows are `[update z, reset r, candidate n]`:
//!
//! ```text
//! z = σ(W_z x + U_z h + b_z)
//! r = σ(W_r x + U_r h + b_r)
//! n = tanh(W_n x + U_n (r ⊙ h) + b_n)
//! h' = (1 - z) ⊙ h + z ⊙ n
//! ```
//!
//! The update gate `z` is exposed per step; it is the gate activation
//! signal consumed downstream.

use rand::Rng;

use super::activation::sigmoid;
use super::matrix::{axpy, Matrix};
use super::params::{uniform_matrix, Parameters};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    pub w_x: Matrix,
    pub w_h: Matrix,
    pub bias: Matrix,
}

#[derive(Debug, Clone)]
pub struct GruStep {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    /// Post-activation `[z, r, n]`.
    pub gates: Vec<f64>,
    pub h: Vec<f64>,
}

impl GruStep {
    pub fn update_gate(&self) -> &[f64] {
        &self.gates[..self.h.len()]
    }
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        Self {
            w_x: uniform_matrix(rng, 3 * hidden_dim, input_dim, super::lstm::INIT_SCALE),
            w_h: uniform_matrix(rng, 3 * hidden_dim, hidden_dim, super::lstm::INIT_SCALE),
            bias: Matrix::zeros(3 * hidden_dim, 1),
        }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            w_x: Matrix::zeros(3 * hidden_dim, input_dim),
            w_h: Matrix::zeros(3 * hidden_dim, hidden_dim),
            bias: Matrix::zeros(3 * hidden_dim, 1),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_x.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_h.cols()
    }

    /// Shape-checked step returning `(new state, output, update gate)`.
    pub fn step(&self, h: &[f64], input: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        if input.len() != self.input_dim() {
            return Err(Error::shape("gru_step input", self.input_dim(), input.len()));
        }
        if h.len() != self.hidden_dim() {
            return Err(Error::shape("gru_step state", self.hidden_dim(), h.len()));
        }
        let s = self.forward(h, input);
        let z = s.update_gate().to_vec();
        Ok((s.h.clone(), s.h, z))
    }

    pub fn forward(&self, h_prev: &[f64], x: &[f64]) -> GruStep {
        let hd = self.hidden_dim();
        let mut pre_x = self.bias.as_slice().to_vec();
        self.w_x.matvec_acc(x, &mut pre_x);
        let mut gates = vec![0.0; 3 * hd];
        for r in 0..2 * hd {
            gates[r] = sigmoid(pre_x[r] + super::matrix::dot(self.w_h.row(r), h_prev));
        }
        let rh: Vec<f64> = (0..hd).map(|k| gates[hd + k] * h_prev[k]).collect();
        for k in 0..hd {
            let r = 2 * hd + k;
            gates[r] = (pre_x[r] + super::matrix::dot(self.w_h.row(r), &rh)).tanh();
        }
        let h = (0..hd)
            .map(|k| {
                let z = gates[k];
                (1.0 - z) * h_prev[k] + z * gates[2 * hd + k]
            })
            .collect();
        GruStep {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            gates,
            h,
        }
    }

    /// Backward through one step given the total gradient `dh` on the new
    /// state. Returns `dh_prev`; adds the input gradient into `dx` if given.
    pub fn backward(
        &self,
        step: &GruStep,
        dh: &[f64],
        grads: &mut GruCell,
        dx: Option<&mut [f64]>,
    ) -> Vec<f64> {
        let hd = self.hidden_dim();
        let g = &step.gates;
        let hp = &step.h_prev;
        let mut dz = vec![0.0; 3 * hd];
        let mut dh_prev = vec![0.0; hd];
        for k in 0..hd {
            let (z, n) = (g[k], g[2 * hd + k]);
            dh_prev[k] = dh[k] * (1.0 - z);
            dz[k] = dh[k] * (n - hp[k]) * z * (1.0 - z);
            dz[2 * hd + k] = dh[k] * z * (1.0 - n * n);
        }
        // gradient through U_n (r ⊙ h)
        let mut d_rh = vec![0.0; hd];
        for k in 0..hd {
            let dn = dz[2 * hd + k];
            if dn != 0.0 {
                axpy(dn, self.w_h.row(2 * hd + k), &mut d_rh);
            }
        }
        let rh: Vec<f64> = (0..hd).map(|k| g[hd + k] * hp[k]).collect();
        for k in 0..hd {
            let r = g[hd + k];
            dz[hd + k] = d_rh[k] * hp[k] * r * (1.0 - r);
            dh_prev[k] += d_rh[k] * r;
        }
        grads.w_x.add_outer(&dz, &step.x);
        for k in 0..2 * hd {
            if dz[k] != 0.0 {
                axpy(dz[k], hp, grads.w_h.row_mut(k));
            }
        }
        for k in 0..hd {
            let d = dz[2 * hd + k];
            if d != 0.0 {
                axpy(d, &rh, grads.w_h.row_mut(2 * hd + k));
            }
        }
        axpy(1.0, &dz, grads.bias.as_mut_slice());
        if let Some(dx) = dx {
            self.w_x.matvec_t_acc(&dz, dx);
        }
        for k in 0..2 * hd {
            if dz[k] != 0.0 {
                axpy(dz[k], self.w_h.row(k), &mut dh_prev);
            }
        }
        dh_prev
    }
}

impl Parameters for GruCell {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        vec![
            ("w_x".into(), &self.w_x),
            ("w_h".into(), &self.w_h),
            ("bias".into(), &self.bias),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w_x, &mut self.w_h, &mut self.bias]
    }
}
