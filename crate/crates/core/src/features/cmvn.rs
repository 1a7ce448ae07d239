use super::FeatureMatrix;

/// Columns whose variance is at or below this are treated as constant.
const MIN_VARIANCE: f64 = 1e-12;

/// Utterance-wise cepstral mean and variance normalization: every column is
/// shifted to zero mean and scaled to unit population variance. Constant
/// columns become all zeros.
pub fn apply_cmvn(f: &FeatureMatrix) -> FeatureMatrix {
    let (t, d) = f.frames.shape();
    let mean = f.frames.mean_rows();
    let mut var = vec![0.0; d];
    for row in f.frames.iter_rows() {
        for (v, (x, m)) in var.iter_mut().zip(row.iter().zip(&mean)) {
            *v += (x - m) * (x - m);
        }
    }
    let inv_std: Vec<f64> = var
        .iter()
        .map(|v| {
            let v = v / t as f64;
            if v <= MIN_VARIANCE {
                0.0
            } else {
                1.0 / v.sqrt()
            }
        })
        .collect();
    let mut out = f.frames.clone();
    for r in 0..t {
        for (c, x) in out.row_mut(r).iter_mut().enumerate() {
            *x = (*x - mean[c]) * inv_std[c];
        }
    }
    FeatureMatrix {
        id: f.id.clone(),
        frames: out,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Matrix;
    use proptest::prelude::*;

    fn fm(rows: &[Vec<f64>]) -> FeatureMatrix {
        FeatureMatrix::new("u", Matrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn hand_computed_column() {
        let f = apply_cmvn(&fm(&[vec![1.0], vec![2.0], vec![3.0]]));
        let want = 1.5f64.sqrt();
        assert!((f.frames.get(0, 0) + want).abs() < 1e-12);
        assert!(f.frames.get(1, 0).abs() < 1e-12);
        assert!((f.frames.get(2, 0) - want).abs() < 1e-12);
    }

    #[test]
    fn constant_column_goes_to_zero() {
        let f = apply_cmvn(&fm(&[vec![4.0, 1.0], vec![4.0, 2.0]]));
        assert_eq!(f.frames.get(0, 0), 0.0);
        assert_eq!(f.frames.get(1, 0), 0.0);
    }

    proptest! {
        #[test]
        fn normalizes_and_is_idempotent(
            data in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 3), 2..40)
        ) {
            let once = apply_cmvn(&fm(&data));
            let t = data.len() as f64;
            for c in 0..3 {
                let col: Vec<f64> = (0..data.len()).map(|r| once.frames.get(r, c)).collect();
                let mean = col.iter().sum::<f64>() / t;
                let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / t;
                prop_assert!(mean.abs() < 1e-6);
                prop_assert!(var.abs() < 1e-9 || (var - 1.0).abs() < 1e-3);
            }
            let twice = apply_cmvn(&once);
            for (a, b) in once.frames.as_slice().iter().zip(twice.frames.as_slice()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
