use super::matrix::Matrix;
use super::params::Parameters;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment accumulators for one parameter container.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl AdamState {
    pub fn new<P: Parameters>(params: &P, config: AdamConfig) -> Self {
        let shapes: Vec<(usize, usize)> = params.tensors().iter().map(|(_, t)| t.shape()).collect();
        Self {
            config,
            step: 0,
            first: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            second: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
        }
    }

    /// One bias-corrected Adam step. Nothing is modified if any gradient is
    /// non-finite or any shape disagrees.
    pub fn update<P: Parameters>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let named = grads.tensors();
        if named.len() != self.first.len() {
            return Err(Error::shape("adam_update tensors", self.first.len(), named.len()));
        }
        for ((name, g), m) in named.iter().zip(&self.first) {
            if g.shape() != m.shape() {
                return Err(Error::shape(
                    "adam_update",
                    format!("{:?}", m.shape()),
                    format!("{:?} for {name}", g.shape()),
                ));
            }
            if let Some(i) = g.as_slice().iter().position(|v| !v.is_finite()) {
                return Err(Error::Training {
                    param: name.clone(),
                    reason: format!("non-finite gradient at index {i}"),
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (((p, (_, g)), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(named)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            let (p, g, m, v) = (p.as_mut_slice(), g.as_slice(), m.as_mut_slice(), v.as_mut_slice());
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Linear;

    fn toy() -> Linear {
        let mut l = Linear::zeros(3, 2);
        l.weight = Matrix::from_fn(2, 3, |r, c| (r + c) as f64 * 0.1);
        l
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = toy();
        let before = p.clone();
        let g = p.zeros_like();
        let mut st = AdamState::new(&p, AdamConfig::default());
        st.update(&mut p, &g).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = toy();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.weight = Matrix::from_fn(2, 3, |r, c| if (r + c) % 2 == 0 { 0.3 } else { -2.0 });
        let lr = 0.01;
        let mut st = AdamState::new(&p, AdamConfig::with_lr(lr));
        st.update(&mut p, &g).unwrap();
        for i in 0..6 {
            let gi = g.weight.as_slice()[i];
            let delta = p.weight.as_slice()[i] - before.weight.as_slice()[i];
            // closed form: -lr * g / (|g| + eps)
            let want = -lr * gi / (gi.abs() + 1e-8);
            assert!((delta - want).abs() < 1e-12);
            assert!(delta * gi < 0.0);
        }
    }

    #[test]
    fn constant_gradient_moves_monotonically() {
        let mut p = toy();
        let mut g = p.zeros_like();
        g.bias.fill(0.5);
        let mut st = AdamState::new(&p, AdamConfig::with_lr(0.1));
        let b0 = p.bias.get(0, 0);
        st.update(&mut p, &g).unwrap();
        let b1 = p.bias.get(0, 0);
        st.update(&mut p, &g).unwrap();
        let b2 = p.bias.get(0, 0);
        assert!(b0 > b1 && b1 > b2);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = toy();
        let mut g = p.zeros_like();
        g.bias.set(1, 0, f64::NAN);
        let mut st = AdamState::new(&p, AdamConfig::default());
        let err = st.update(&mut p, &g).unwrap_err();
        match err {
            Error::Training { param, .. } => assert_eq!(param, "bias"),
            e => panic!("unexpected {e}"),
        }
        assert_eq!(st.step, 0);
    }
}
