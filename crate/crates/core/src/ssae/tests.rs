use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numeric::{finite_diff_check, LstmState};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn features(t: usize, d: usize, seed: u64) -> FeatureMatrix {
    let mut r = rng(seed);
    let m = crate::numeric::uniform_matrix(&mut r, t, d, 1.0);
    FeatureMatrix::new("u", m).unwrap()
}

fn scaled_ae(d: usize, h: usize, scale: f64, seed: u64) -> Autoencoder {
    let mut ae = Autoencoder::new(d, h, &mut rng(seed));
    for t in ae.tensors_mut() {
        for v in t.as_mut_slice() {
            *v *= scale;
        }
    }
    ae
}

#[test]
fn embedding_of_a_segment_ignores_other_segments() {
    let ae = Autoencoder::new(3, 5, &mut rng(1));
    let f = features(10, 3, 2);
    let b = BoundarySet::from_interior(10, &[3, 7]).unwrap();
    let y = ae.encode_segments(&f, &b).unwrap();

    let mut g = f.clone();
    for t in (0..3).chain(7..10) {
        for v in g.frames.row_mut(t) {
            *v = -*v + 0.5;
        }
    }
    let y2 = ae.encode_segments(&g, &b).unwrap();
    assert_eq!(y.get(1), y2.get(1));
    assert_ne!(y.get(0), y2.get(0));
}

#[test]
fn swapping_segments_swaps_embeddings() {
    let ae = Autoencoder::new(2, 4, &mut rng(3));
    let f = features(7, 2, 4);
    let b = BoundarySet::from_interior(7, &[3]).unwrap();
    let y = ae.encode_segments(&f, &b).unwrap();

    let mut rows: Vec<Vec<f64>> = (3..7).map(|t| f.frame(t).to_vec()).collect();
    rows.extend((0..3).map(|t| f.frame(t).to_vec()));
    let swapped = FeatureMatrix::new("s", Matrix::from_rows(&rows).unwrap()).unwrap();
    let b2 = BoundarySet::from_interior(7, &[4]).unwrap();
    let y2 = ae.encode_segments(&swapped, &b2).unwrap();
    assert_eq!(y.get(0), y2.get(1));
    assert_eq!(y.get(1), y2.get(0));
}

#[test]
fn single_segment_equals_plain_lstm() {
    let ae = Autoencoder::new(3, 4, &mut rng(5));
    let f = features(6, 3, 6);
    let y = ae.encode_segments(&f, &BoundarySet::whole(6)).unwrap();
    let mut s = LstmState::zeros(4);
    for t in 0..6 {
        s = ae.encoder.step(&s, f.frame(t)).unwrap().0;
    }
    assert_eq!(y.len(), 1);
    assert_eq!(y.get(0), &s.h[..]);
}

#[test]
fn decoder_gradient_stays_inside_its_segment() {
    let ae = scaled_ae(3, 4, 5.0, 7);
    let f = features(9, 3, 8);
    let b = BoundarySet::from_interior(9, &[2, 5]).unwrap();
    let y = ae.encode_segments(&f, &b).unwrap();
    for feed in [DecoderFeed::FreeRunning, DecoderFeed::TeacherForced] {
        for n in 0..3 {
            let mut counted = vec![false; 3];
            counted[n] = true;
            let g = ae.embedding_gradients(&y, &b, &f, feed, &counted).unwrap();
            for m in 0..3 {
                let mag: f64 = g.row(m).iter().map(|v| v.abs()).sum();
                if m == n {
                    assert!(mag > 0.0);
                } else {
                    assert_eq!(mag, 0.0, "segment {n} leaked into {m}");
                }
            }
        }
    }
}

#[test]
fn decode_segments_checks_counts() {
    let ae = Autoencoder::new(2, 3, &mut rng(9));
    let f = features(5, 2, 10);
    let y = ae.encode_segments(&f, &BoundarySet::whole(5)).unwrap();
    let b = BoundarySet::from_interior(5, &[2]).unwrap();
    assert!(matches!(
        ae.decode_segments(&y, &b, DecoderFeed::FreeRunning, None),
        Err(crate::Error::Shape { .. })
    ));
    assert!(ae
        .decode_segments(&y, &BoundarySet::whole(5), DecoderFeed::TeacherForced, None)
        .is_err());
}

#[test]
fn reconstruct_matches_utterance_error() {
    let ae = Autoencoder::new(3, 4, &mut rng(11));
    let f = features(8, 3, 12);
    let b = BoundarySet::from_interior(8, &[4]).unwrap();
    for feed in [DecoderFeed::FreeRunning, DecoderFeed::TeacherForced] {
        let r = ae.reconstruct(&f, &b, feed).unwrap();
        let a = reconstruction_loss(&f, &r).unwrap();
        let e = ae.utterance_error(&f, &b, feed).unwrap();
        assert!((a - e).abs() < 1e-12);
    }
}

#[test]
fn reconstruction_loss_fixtures() {
    let x = FeatureMatrix::new("a", Matrix::zeros(2, 39)).unwrap();
    let y = FeatureMatrix::new("b", Matrix::from_fn(2, 39, |_, _| 1.0)).unwrap();
    assert_eq!(reconstruction_loss(&x, &y).unwrap(), 2.0);
    assert_eq!(reconstruction_loss(&x, &x).unwrap(), 0.0);
    let z = FeatureMatrix::new("c", Matrix::zeros(3, 39)).unwrap();
    assert!(reconstruction_loss(&x, &z).is_err());
}

#[test]
fn autoencoder_gradient_matches_finite_differences() {
    let ae = scaled_ae(3, 4, 5.0, 13);
    let f = features(6, 3, 14);
    let b = BoundarySet::from_interior(6, &[2]).unwrap();
    for feed in [DecoderFeed::FreeRunning, DecoderFeed::TeacherForced] {
        let mut grads = ae.zeros_like();
        ae.loss_and_grad(&f, &b, feed, &mut grads).unwrap();
        let r = finite_diff_check(&ae, &grads, |p| p.utterance_error(&f, &b, feed).unwrap(), 1e-5, None).unwrap();
        assert!(r.max_rel_error < 1e-4, "{feed:?}: {r:?}");
    }
}

#[test]
fn zero_gate_is_indifferent() {
    let gate = SegmentationGate::zeros(3, 2, 4, 2);
    let f = features(5, 3, 15);
    let g = GasSequence::new(Matrix::from_fn(5, 2, |_, _| 0.3)).unwrap();
    let out = gate.policy_output(&f, &g, &[Action::Pass; 4]).unwrap();
    assert!(out.probs.as_slice().iter().all(|&p| p == 0.5));
    // ties pass
    let r = gate.rollout(&f, &g, None).unwrap();
    assert!(r.actions.iter().all(|&a| a == Action::Pass));
}

#[test]
fn single_frame_utterance() {
    let gate = SegmentationGate::new(3, 0, 4, 1, &mut rng(16));
    let f = features(1, 3, 17);
    let out = gate.policy_output(&f, &GasSequence::empty(1), &[]).unwrap();
    assert_eq!(out.len(), 1);
    let b = BoundarySet::from_actions(&gate.rollout(&f, &GasSequence::empty(1), None).unwrap().actions).unwrap();
    assert_eq!(b.ends(), &[1]);
}

#[test]
fn gate_rejects_mismatched_gas() {
    let gate = SegmentationGate::new(3, 2, 4, 1, &mut rng(18));
    let f = features(4, 3, 19);
    assert!(gate.rollout(&f, &GasSequence::empty(4), None).is_err());
    let short = GasSequence::new(Matrix::from_fn(3, 2, |_, _| 0.5)).unwrap();
    assert!(gate.rollout(&f, &short, None).is_err());
}

#[test]
fn rollout_and_forward_agree() {
    let gate = SegmentationGate::new(2, 1, 3, 2, &mut rng(20));
    let f = features(8, 2, 21);
    let g = GasSequence::new(Matrix::from_fn(8, 1, |r, _| 0.1 + 0.1 * r as f64)).unwrap();
    let mut sampler = rng(22);
    let r = gate.rollout(&f, &g, Some(&mut sampler)).unwrap();
    let t = gate.forward(&f, &g, &r.actions).unwrap();
    assert_eq!(t.probs(), r.trace.probs());
}

#[test]
fn gate_log_prob_gradient_matches_finite_differences() {
    let mut gate = SegmentationGate::new(2, 1, 3, 2, &mut rng(23));
    for t in gate.tensors_mut() {
        for v in t.as_mut_slice() {
            *v *= 10.0;
        }
    }
    let f = features(6, 2, 24);
    let g = GasSequence::new(Matrix::from_fn(6, 1, |r, _| 0.2 + 0.1 * r as f64)).unwrap();
    let actions = vec![
        Action::Pass,
        Action::Segment,
        Action::Pass,
        Action::Pass,
        Action::Segment,
        Action::Segment,
    ];
    let coeffs = [0.5, -1.0, 2.0, 0.3, -0.7, 1.1];
    let objective = |p: &SegmentationGate| -> f64 {
        let t = p.forward(&f, &g, &actions).unwrap();
        t.log_probs(&actions).iter().zip(&coeffs).map(|(l, c)| l * c).sum()
    };
    let trace = gate.forward(&f, &g, &actions).unwrap();
    let mut grads = gate.zeros_like();
    gate.log_prob_backward(&trace, &actions, &coeffs, &mut grads);
    let r = finite_diff_check(&gate, &grads, objective, 1e-5, None).unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn params_are_seed_deterministic() {
    let cfg = ModelConfig {
        feature_dim: 3,
        gas_dim: 2,
        hidden_dim: 4,
        gate_hidden: 5,
        gate_layers: 2,
        decoder_feed: DecoderFeed::FreeRunning,
    };
    let a = SsaeParams::new(cfg, &mut rng(25));
    let b = SsaeParams::new(cfg, &mut rng(25));
    let c = SsaeParams::new(cfg, &mut rng(26));
    assert_eq!(a, b);
    assert_ne!(a, c);
    let f = features(9, 3, 27);
    let g = GasSequence::new(Matrix::from_fn(9, 2, |_, _| 0.5)).unwrap();
    assert_eq!(a.embed(&f, &g).unwrap(), b.embed(&f, &g).unwrap());
}
