use rand::Rng;

use super::matrix::Matrix;

/// A model made of named parameter tensors.
///
/// `tensors` and `tensors_mut` must list the same tensors in the same order;
/// optimizers, gradient checks and checkpoints all rely on that pairing.
pub trait Parameters {
    fn tensors(&self) -> Vec<(String, &Matrix)>;
    fn tensors_mut(&mut self) -> Vec<&mut Matrix>;

    /// A same-shaped container with all entries zero, used for gradients.
    fn zeros_like(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

pub(crate) fn prefixed<'a>(
    prefix: &str,
    inner: Vec<(String, &'a Matrix)>,
) -> impl Iterator<Item = (String, &'a Matrix)> + 'a {
    let prefix = prefix.to_string();
    inner
        .into_iter()
        .map(move |(n, m)| (format!("{prefix}.{n}"), m))
}

pub fn global_norm<P: Parameters>(grads: &P) -> f64 {
    grads
        .tensors()
        .iter()
        .map(|(_, t)| t.sum_squares())
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so its global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<P: Parameters>(grads: &mut P, max_norm: f64) -> f64 {
    let n = global_norm(grads);
    if n > max_norm && n.is_finite() {
        let s = max_norm / n;
        for t in grads.tensors_mut() {
            t.scale(s);
        }
    }
    n
}

/// `acc += alpha * other`, tensor by tensor.
pub fn accumulate<P: Parameters>(acc: &mut P, alpha: f64, other: &P) {
    let src = other.tensors();
    for (dst, (_, s)) in acc.tensors_mut().into_iter().zip(src) {
        dst.add_scaled(alpha, s);
    }
}

pub fn scale_all<P: Parameters>(p: &mut P, alpha: f64) {
    for t in p.tensors_mut() {
        t.scale(alpha);
    }
}

/// Uniform draw in `[-scale, scale]`.
pub fn uniform_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..=scale))
}
