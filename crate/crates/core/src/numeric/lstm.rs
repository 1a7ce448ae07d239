//! LSTM cell and layer stack with explicit per-step caches for
//! backpropagation through time.
//!
//! Gate rows are laid out `[input, forget, candidate, output]`, each
//! `hidden_dim` long:
//!
//! ```text
//! z = W_x x + W_h h_prev + b
//! i = σ(z_i)   f = σ(z_f)   g = tanh(z_g)   o = σ(z_o)
//! c = f ⊙ c_prev + i ⊙ g
//! h = o ⊙ tanh(c)
//! ```

use rand::Rng;

use super::activation::sigmoid;
use super::matrix::Matrix;
use super::params::{prefixed, uniform_matrix, Parameters};
use crate::error::{Error, Result};

pub const INIT_SCALE: f64 = 0.08;
pub const FORGET_BIAS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub w_x: Matrix,
    pub w_h: Matrix,
    pub bias: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self {
            h: vec![0.0; hidden_dim],
            c: vec![0.0; hidden_dim],
        }
    }
}

/// Everything the backward pass needs from one forward step.
#[derive(Debug, Clone)]
pub struct LstmStep {
    pub x: Vec<f64>,
    pub prev: LstmState,
    /// Post-activation gates `[i, f, g, o]`.
    pub gates: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub state: LstmState,
}

impl LstmCell {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let w_x = uniform_matrix(rng, 4 * hidden_dim, input_dim, INIT_SCALE);
        let w_h = uniform_matrix(rng, 4 * hidden_dim, hidden_dim, INIT_SCALE);
        let mut bias = Matrix::zeros(4 * hidden_dim, 1);
        for k in hidden_dim..2 * hidden_dim {
            bias.set(k, 0, FORGET_BIAS);
        }
        Self { w_x, w_h, bias }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            w_x: Matrix::zeros(4 * hidden_dim, input_dim),
            w_h: Matrix::zeros(4 * hidden_dim, hidden_dim),
            bias: Matrix::zeros(4 * hidden_dim, 1),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_x.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_h.cols()
    }

    /// Shape-checked single step. Returns the new state and the output
    /// (which for an LSTM is the new hidden vector).
    pub fn step(&self, state: &LstmState, input: &[f64]) -> Result<(LstmState, Vec<f64>)> {
        if input.len() != self.input_dim() {
            return Err(Error::shape("lstm_step input", self.input_dim(), input.len()));
        }
        let h = self.hidden_dim();
        if state.h.len() != h || state.c.len() != h {
            return Err(Error::shape(
                "lstm_step state",
                h,
                format!("h={}, c={}", state.h.len(), state.c.len()),
            ));
        }
        let step = self.forward(state, input);
        let out = step.state.h.clone();
        Ok((step.state, out))
    }

    pub fn forward(&self, prev: &LstmState, x: &[f64]) -> LstmStep {
        let hd = self.hidden_dim();
        let mut z = self.bias.as_slice().to_vec();
        self.w_x.matvec_acc(x, &mut z);
        self.w_h.matvec_acc(&prev.h, &mut z);
        for (k, v) in z.iter_mut().enumerate() {
            *v = if (2 * hd..3 * hd).contains(&k) {
                v.tanh()
            } else {
                sigmoid(*v)
            };
        }
        let mut c = vec![0.0; hd];
        let mut tanh_c = vec![0.0; hd];
        let mut hn = vec![0.0; hd];
        for k in 0..hd {
            let (i, f, g, o) = (z[k], z[hd + k], z[2 * hd + k], z[3 * hd + k]);
            c[k] = f * prev.c[k] + i * g;
            tanh_c[k] = c[k].tanh();
            hn[k] = o * tanh_c[k];
        }
        LstmStep {
            x: x.to_vec(),
            prev: prev.clone(),
            gates: z,
            tanh_c,
            state: LstmState { h: hn, c },
        }
    }

    /// Backward through one step. `dh`/`dc` are the total gradients reaching
    /// the new state. Accumulates parameter gradients into `grads`, adds the
    /// input gradient into `dx` when given, and returns `(dh_prev, dc_prev)`.
    pub fn backward(
        &self,
        step: &LstmStep,
        dh: &[f64],
        dc: &[f64],
        grads: &mut LstmCell,
        dx: Option<&mut [f64]>,
    ) -> (Vec<f64>, Vec<f64>) {
        let hd = self.hidden_dim();
        let z = &step.gates;
        let mut dz = vec![0.0; 4 * hd];
        let mut dc_prev = vec![0.0; hd];
        for k in 0..hd {
            let (i, f, g, o) = (z[k], z[hd + k], z[2 * hd + k], z[3 * hd + k]);
            let tc = step.tanh_c[k];
            let dct = dc[k] + dh[k] * o * (1.0 - tc * tc);
            dz[k] = dct * g * i * (1.0 - i);
            dz[hd + k] = dct * step.prev.c[k] * f * (1.0 - f);
            dz[2 * hd + k] = dct * i * (1.0 - g * g);
            dz[3 * hd + k] = dh[k] * tc * o * (1.0 - o);
            dc_prev[k] = dct * f;
        }
        grads.w_x.add_outer(&dz, &step.x);
        grads.w_h.add_outer(&dz, &step.prev.h);
        super::matrix::axpy(1.0, &dz, grads.bias.as_mut_slice());
        if let Some(dx) = dx {
            self.w_x.matvec_t_acc(&dz, dx);
        }
        let mut dh_prev = vec![0.0; hd];
        self.w_h.matvec_t_acc(&dz, &mut dh_prev);
        (dh_prev, dc_prev)
    }
}

impl Parameters for LstmCell {
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

/// Stacked LSTM layers; layer `l > 0` consumes the hidden output of `l - 1`.
/// A stack with no layers passes its input through unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmStack {
    pub layers: Vec<LstmCell>,
}

#[derive(Debug, Clone)]
pub struct StackStep {
    pub steps: Vec<LstmStep>,
}

impl LstmStack {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, layers: usize, rng: &mut R) -> Self {
        let layers = (0..layers)
            .map(|l| LstmCell::new(if l == 0 { input_dim } else { hidden_dim }, hidden_dim, rng))
            .collect();
        Self { layers }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize, layers: usize) -> Self {
        let layers = (0..layers)
            .map(|l| LstmCell::zeros(if l == 0 { input_dim } else { hidden_dim }, hidden_dim))
            .collect();
        Self { layers }
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        self.layers.last().map_or(input_dim, LstmCell::hidden_dim)
    }

    pub fn initial_state(&self) -> Vec<LstmState> {
        self.layers.iter().map(|l| LstmState::zeros(l.hidden_dim())).collect()
    }

    /// Shape-checked step over the whole stack.
    pub fn step(&self, state: &[LstmState], input: &[f64]) -> Result<(Vec<LstmState>, Vec<f64>)> {
        if state.len() != self.layers.len() {
            return Err(Error::shape("lstm stack state", self.layers.len(), state.len()));
        }
        let mut x = input.to_vec();
        let mut next = Vec::with_capacity(state.len());
        for (cell, s) in self.layers.iter().zip(state) {
            let (ns, out) = cell.step(s, &x)?;
            next.push(ns);
            x = out;
        }
        Ok((next, x))
    }

    pub fn forward(&self, state: &[LstmState], input: &[f64]) -> StackStep {
        let mut steps: Vec<LstmStep> = Vec::with_capacity(self.layers.len());
        for (l, cell) in self.layers.iter().enumerate() {
            let x = if l == 0 { input } else { &steps[l - 1].state.h };
            let s = cell.forward(&state[l], x);
            steps.push(s);
        }
        StackStep { steps }
    }

    /// Backward through one stacked step. `dh_top` is the gradient on the top
    /// layer output; `carry` holds per-layer `(dh, dc)` flowing from the next
    /// time step and is replaced by the gradients for the previous one.
    pub fn backward(
        &self,
        step: &StackStep,
        dh_top: &[f64],
        carry: &mut [(Vec<f64>, Vec<f64>)],
        grads: &mut LstmStack,
        mut dx: Option<&mut [f64]>,
    ) {
        let mut d_out = dh_top.to_vec();
        for l in (0..self.layers.len()).rev() {
            let (dh_next, dc_next) = std::mem::take(&mut carry[l]);
            let dh: Vec<f64> = d_out.iter().zip(&dh_next).map(|(a, b)| a + b).collect();
            let (cell, g) = (&self.layers[l], &mut grads.layers[l]);
            carry[l] = if l > 0 {
                let mut d_in = vec![0.0; cell.input_dim()];
                let r = cell.backward(&step.steps[l], &dh, &dc_next, g, Some(&mut d_in));
                d_out = d_in;
                r
            } else {
                cell.backward(&step.steps[l], &dh, &dc_next, g, dx.as_deref_mut())
            };
        }
    }

    pub fn zero_carry(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.layers
            .iter()
            .map(|l| (vec![0.0; l.hidden_dim()], vec![0.0; l.hidden_dim()]))
            .collect()
    }
}

impl StackStep {
    pub fn states(&self) -> Vec<LstmState> {
        self.steps.iter().map(|s| s.state.clone()).collect()
    }

    pub fn top(&self) -> &[f64] {
        &self.steps.last().expect("non-empty stack").state.h
    }
}

impl Parameters for LstmStack {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(l, c)| prefixed(&format!("l{l}"), c.tensors()))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers.iter_mut().flat_map(|c| c.tensors_mut()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straight-line scalar implementation of the LSTM equations.
    fn scalar_lstm(cell: &LstmCell, h: &[f64], c: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hd = h.len();
        let pre = |row: usize| {
            let mut s = cell.bias.get(row, 0);
            for j in 0..x.len() {
                s += cell.w_x.get(row, j) * x[j];
            }
            for j in 0..hd {
                s += cell.w_h.get(row, j) * h[j];
            }
            s
        };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut hn = vec![0.0; hd];
        let mut cn = vec![0.0; hd];
        for k in 0..hd {
            let i = sig(pre(k));
            let f = sig(pre(hd + k));
            let g = pre(2 * hd + k).tanh();
            let o = sig(pre(3 * hd + k));
            cn[k] = f * c[k] + i * g;
            hn[k] = o * cn[k].tanh();
        }
        (hn, cn)
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let cell = LstmCell::zeros(3, 4);
        let (_, out) = cell.step(&LstmState::zeros(4), &[1.0, -2.0, 0.5]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut cell = LstmCell::new(3, 2, &mut rng);
        cell.w_x = uniform_matrix(&mut rng, 8, 3, 0.9);
        cell.w_h = uniform_matrix(&mut rng, 8, 2, 0.9);
        cell.bias = uniform_matrix(&mut rng, 8, 1, 0.5);
        let state = LstmState {
            h: vec![0.3, -0.2],
            c: vec![-0.4, 0.8],
        };
        let x = [0.5, -1.1, 0.25];
        let (ns, out) = cell.step(&state, &x).unwrap();
        let (h, c) = scalar_lstm(&cell, &state.h, &state.c, &x);
        for k in 0..2 {
            assert!((out[k] - h[k]).abs() < 1e-14);
            assert!((ns.c[k] - c[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn repeated_input_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cell = LstmCell::new(2, 4, &mut rng);
        let x = [0.7, -0.3];
        let mut state = LstmState::zeros(4);
        let mut deltas = Vec::new();
        for _ in 0..60 {
            let (ns, _) = cell.step(&state, &x).unwrap();
            let d: f64 = ns
                .h
                .iter()
                .chain(&ns.c)
                .zip(state.h.iter().chain(&state.c))
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            deltas.push(d);
            state = ns;
        }
        for w in deltas[10..].windows(2) {
            assert!(w[1] <= w[0] + 1e-15, "{deltas:?}");
        }
        assert!(deltas.last().unwrap() < &1e-3);
    }

    #[test]
    fn rejects_bad_input_length() {
        let cell = LstmCell::zeros(3, 2);
        let err = cell.step(&LstmState::zeros(2), &[1.0; 4]).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn forget_bias_initialized() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cell = LstmCell::new(3, 5, &mut rng);
        for k in 0..20 {
            let want = if (5..10).contains(&k) { 1.0 } else { 0.0 };
            assert_eq!(cell.bias.get(k, 0), want);
        }
        assert!(cell.w_x.as_slice().iter().all(|v| v.abs() <= INIT_SCALE));
    }

    #[test]
    fn empty_stack_is_identity() {
        let stack = LstmStack::zeros(3, 4, 0);
        let (state, out) = stack.step(&[], &[1.0, 2.0, 3.0]).unwrap();
        assert!(state.is_empty());
        assert_eq!(out, vec![1.0, 2.0, 3.0]);
    }
}
