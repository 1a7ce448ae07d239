use rand::Rng;

use super::matrix::{axpy, Matrix};
use super::params::{uniform_matrix, Parameters};

/// Affine map `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, output_dim: usize, rng: &mut R) -> Self {
        Self {
            weight: uniform_matrix(rng, output_dim, input_dim, super::lstm::INIT_SCALE),
            bias: Matrix::zeros(output_dim, 1),
        }
    }

    pub fn zeros(input_dim: usize, output_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(output_dim, input_dim),
            bias: Matrix::zeros(output_dim, 1),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.bias.as_slice().to_vec();
        self.weight.matvec_acc(x, &mut y);
        y
    }

    /// Accumulates parameter gradients for `dy` at input `x`, and adds the
    /// input gradient into `dx` when given.
    pub fn backward(&self, x: &[f64], dy: &[f64], grads: &mut Linear, dx: Option<&mut [f64]>) {
        grads.weight.add_outer(dy, x);
        axpy(1.0, dy, grads.bias.as_mut_slice());
        if let Some(dx) = dx {
            self.weight.matvec_t_acc(dy, dx);
        }
    }
}

impl Parameters for Linear {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.weight, &mut self.bias]
    }
}
