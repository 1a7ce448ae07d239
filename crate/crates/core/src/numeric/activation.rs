use crate::error::{Error, Result};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax. Empty input is a domain error.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Domain("softmax of an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("softmax of non-finite logits".into()));
    }
    Ok(softmax_unchecked(v))
}

pub(crate) fn softmax_unchecked(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// Two-way softmax returning the first probability, computed as a sigmoid
/// of the logit gap so both entries stay strictly inside (0, 1).
#[inline]
pub(crate) fn softmax2(a: f64, b: f64) -> [f64; 2] {
    let p = sigmoid(a - b);
    [p, sigmoid(b - a)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fixed_points() {
        let p = softmax(&[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
        let p = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn matches_exp_over_sum() {
        let v = [0.3, -1.7, 2.2];
        let z: f64 = v.iter().map(|x: &f64| x.exp()).sum();
        let p = softmax(&v).unwrap();
        for (pi, vi) in p.iter().zip(v) {
            assert!((pi - vi.exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_is_symmetric_and_bounded() {
        for x in [-800.0, -5.0, 0.0, 3.0, 800.0] {
            let s = sigmoid(x);
            assert!((0.0..=1.0).contains(&s));
            assert!((s + sigmoid(-x) - 1.0).abs() < 1e-15);
        }
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn softmax2_agrees_with_softmax() {
        let [a, b] = softmax2(0.7, -0.4);
        let p = softmax(&[0.7, -0.4]).unwrap();
        assert!((a - p[0]).abs() < 1e-15 && (b - p[1]).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(v in prop::collection::vec(-30.0f64..30.0, 1..8)) {
            let p = softmax(&v).unwrap();
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            for i in 0..v.len() {
                for j in 0..v.len() {
                    if v[i] < v[j] {
                        prop_assert!(p[i] <= p[j]);
                    }
                }
            }
        }

        #[test]
        fn softmax_shift_invariant(v in prop::collection::vec(-10.0f64..10.0, 1..8), c in -50.0f64..50.0) {
            let p = softmax(&v).unwrap();
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let q = softmax(&shifted).unwrap();
            let argmax = |x: &[f64]| x.iter().enumerate().fold(0, |b, (i, &val)| if val > x[b] { i } else { b });
            prop_assert_eq!(argmax(&p), argmax(&q));
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
