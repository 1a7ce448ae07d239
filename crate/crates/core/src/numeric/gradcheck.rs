use super::params::Parameters;
use crate::error::{Error, Result};

/// Differences below this magnitude are measured against it instead of the
/// numeric gradient, so near-zero coordinates do not dominate the report.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares an analytic gradient against central differences.
///
/// `loss` evaluates the scalar loss; `analytic` is the gradient at `params`.
/// Relative error per coordinate is `|a - n| / max(|n|, REL_ERROR_FLOOR)`.
/// When `max_coords` is given, at most that many coordinates per tensor are
/// probed, evenly strided, so large models stay cheap to check.
pub fn finite_diff_check<P, F>(
    params: &P,
    analytic: &P,
    mut loss: F,
    eps: f64,
    max_coords: Option<usize>,
) -> Result<GradCheckReport>
where
    P: Parameters + Clone,
    F: FnMut(&P) -> f64,
{
    let mut probe = params.clone();
    let grads = analytic.tensors();
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for (ti, name) in names.iter().enumerate() {
        let len = grads[ti].1.len();
        let stride = max_coords.map_or(1, |m| len.div_ceil(m.max(1)).max(1));
        for i in (0..len).step_by(stride) {
            let orig = probe.tensors_mut()[ti].as_slice()[i];
            probe.tensors_mut()[ti].as_mut_slice()[i] = orig + eps;
            let plus = loss(&probe);
            probe.tensors_mut()[ti].as_mut_slice()[i] = orig - eps;
            let minus = loss(&probe);
            probe.tensors_mut()[ti].as_mut_slice()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::GradCheck(format!("non-finite loss probing {name}[{i}]")));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grads[ti].1.as_slice()[i];
            let rel = (a - numeric).abs() / numeric.abs().max(REL_ERROR_FLOOR);
            report.checked += 1;
            if report.worst_param.is_empty() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = name.clone();
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{Linear, Matrix};

    fn point() -> Linear {
        let mut l = Linear::zeros(3, 2);
        l.weight = Matrix::from_fn(2, 3, |r, c| 0.3 * r as f64 - 0.2 * c as f64 + 0.1);
        l.bias = Matrix::from_vec(2, 1, vec![0.7, -1.3]).unwrap();
        l
    }

    fn half_sq(p: &Linear) -> f64 {
        p.tensors().iter().map(|(_, t)| t.sum_squares()).sum::<f64>() / 2.0
    }

    #[test]
    fn quadratic_loss_passes() {
        let p = point();
        let r = finite_diff_check(&p, &p, half_sq, 1e-5, None).unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert_eq!(r.checked, 8);
    }

    #[test]
    fn doubled_gradient_reports_unit_error() {
        let p = point();
        let mut g = p.clone();
        for t in g.tensors_mut() {
            t.scale(2.0);
        }
        let r = finite_diff_check(&p, &g, half_sq, 1e-5, None).unwrap();
        assert!((r.max_rel_error - 1.0).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn non_finite_loss_fails() {
        let p = point();
        let err = finite_diff_check(&p, &p, |_| f64::NAN, 1e-5, None).unwrap_err();
        assert!(matches!(err, Error::GradCheck(_)));
    }
}
