use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use segaw_core::features::FeatureMatrix;
use segaw_core::gas::GasSequence;
use segaw_core::matching::{dtw_score, subsequence_score};
use segaw_core::numeric::{uniform_matrix, LstmCell, LstmState, Matrix};
use segaw_core::ssae::{BoundarySet, EmbeddingSequence, ModelConfig, SsaeParams};

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(1)
}

fn lstm_step(c: &mut Criterion) {
    let mut r = rng();
    let cell = LstmCell::new(39, 100, &mut r);
    let x = uniform_matrix(&mut r, 1, 39, 1.0);
    let s = LstmState::zeros(100);
    c.bench_function("lstm step 39->100", |b| b.iter(|| cell.step(black_box(&s), black_box(x.row(0))).unwrap()));
}

fn encode_and_rollout(c: &mut Criterion) {
    let mut r = rng();
    let cfg = ModelConfig {
        feature_dim: 8,
        gas_dim: 16,
        hidden_dim: 32,
        gate_hidden: 32,
        gate_layers: 2,
        ..ModelConfig::default()
    };
    let p = SsaeParams::new(cfg, &mut r);
    let f = FeatureMatrix::new("u", uniform_matrix(&mut r, 80, 8, 1.0)).unwrap();
    let g = GasSequence::new(Matrix::from_fn(80, 16, |t, k| 0.1 + 0.8 * ((t * 7 + k) % 10) as f64 / 10.0)).unwrap();
    let b = BoundarySet::from_interior(80, &[12, 30, 41, 60]).unwrap();
    c.bench_function("encode 80 frames, 5 segments", |bch| {
        bch.iter(|| p.autoencoder.encode_segments(black_box(&f), black_box(&b)).unwrap())
    });
    c.bench_function("greedy gate rollout, 80 frames", |bch| {
        bch.iter(|| p.gate.rollout(black_box(&f), black_box(&g), None).unwrap())
    });
}

fn matching(c: &mut Criterion) {
    let mut r = rng();
    let q = EmbeddingSequence {
        vectors: uniform_matrix(&mut r, 2, 32, 1.0),
    };
    let d = EmbeddingSequence {
        vectors: uniform_matrix(&mut r, 8, 32, 1.0),
    };
    c.bench_function("subsequence score 2x8 segments", |b| {
        b.iter(|| subsequence_score(black_box(&q), black_box(&d)).unwrap())
    });
    let qf = FeatureMatrix::new("q", uniform_matrix(&mut r, 15, 8, 1.0)).unwrap();
    let df = FeatureMatrix::new("d", uniform_matrix(&mut r, 80, 8, 1.0)).unwrap();
    c.bench_function("subsequence dtw 15x80 frames", |b| {
        b.iter(|| dtw_score(black_box(&qf), black_box(&df)).unwrap())
    });
}

criterion_group!(benches, lstm_step, encode_and_rollout, matching);
criterion_main!(benches);
