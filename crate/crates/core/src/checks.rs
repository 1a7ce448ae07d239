//! Finite-difference checks of every analytic gradient in the model, on
//! small random instances.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::features::FeatureMatrix;
use crate::gas::{GasModel, GasSequence};
use crate::numeric::{finite_diff_check, uniform_matrix, GradCheckReport, Matrix, Parameters};
use crate::ssae::{Action, Autoencoder, BoundarySet, DecoderFeed, SegmentationGate};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
const EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedCheck {
    pub name: String,
    pub report: GradCheckReport,
}

impl NamedCheck {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < GRADCHECK_TOLERANCE
    }
}

// Small random weights keep every unit in its linear range, where finite
// differences tell little; scaling up exercises the nonlinearities.
fn scaled<P: Parameters>(mut p: P, s: f64) -> P {
    for t in p.tensors_mut() {
        for v in t.as_mut_slice() {
            *v *= s;
        }
    }
    p
}

/// Checks the autoencoder under both decoder feeds, the gate log-likelihood
/// and the GAS window loss. Instances have `T <= 6` and dims `<= 4`.
pub fn gradient_checks(seed: u64) -> Result<Vec<NamedCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let t = 6;

    let f = FeatureMatrix::new("gradcheck", uniform_matrix(&mut rng, t, 3, 1.0))?;
    let b = BoundarySet::from_interior(t, &[2])?;
    let ae = scaled(Autoencoder::new(3, 4, &mut rng), 5.0);
    for (name, feed) in [
        ("autoencoder (free running)", DecoderFeed::FreeRunning),
        ("autoencoder (teacher forced)", DecoderFeed::TeacherForced),
    ] {
        let mut grads = ae.zeros_like();
        ae.loss_and_grad(&f, &b, feed, &mut grads)?;
        let report = finite_diff_check(
            &ae,
            &grads,
            |p| p.utterance_error(&f, &b, feed).unwrap_or(f64::NAN),
            EPS,
            None,
        )?;
        out.push(NamedCheck {
            name: name.into(),
            report,
        });
    }

    let gate = scaled(SegmentationGate::new(3, 2, 4, 2, &mut rng), 5.0);
    let g = GasSequence::new(Matrix::from_fn(t, 2, |r, c| 0.15 + 0.1 * r as f64 + 0.05 * c as f64))?;
    let actions = [
        Action::Pass,
        Action::Segment,
        Action::Pass,
        Action::Pass,
        Action::Segment,
        Action::Segment,
    ];
    let coeffs = [0.5, -1.0, 2.0, 0.3, -0.7, 1.1];
    let trace = gate.forward(&f, &g, &actions)?;
    let mut grads = gate.zeros_like();
    gate.log_prob_backward(&trace, &actions, &coeffs, &mut grads);
    let report = finite_diff_check(
        &gate,
        &grads,
        |p| match p.forward(&f, &g, &actions) {
            Ok(tr) => tr.log_probs(&actions).iter().zip(&coeffs).map(|(l, c)| l * c).sum(),
            Err(_) => f64::NAN,
        },
        EPS,
        None,
    )?;
    out.push(NamedCheck {
        name: "segmentation gate".into(),
        report,
    });

    let gas = scaled(GasModel::new(3, 3, seed), 5.0);
    let mut grads = gas.zeros_like();
    gas.window_loss_grad(&f.frames, 1..t, Some(&mut grads));
    let report = finite_diff_check(&gas, &grads, |m| m.window_loss_grad(&f.frames, 1..t, None), EPS, None)?;
    out.push(NamedCheck {
        name: "gas autoencoder".into(),
        report,
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_gradients_pass() {
        for seed in 0..3 {
            for c in gradient_checks(seed).unwrap() {
                assert!(c.passed(), "seed {seed} {}: {:?}", c.name, c.report);
            }
        }
    }
}
