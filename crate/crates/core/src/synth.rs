//! Synthetic corpus with exact word boundaries.
//!
//! A lexicon of smooth feature-space trajectories ("templates") is sampled
//! once. Each utterance concatenates randomly chosen words, each linearly
//! time-warped and corrupted with Gaussian noise. A word's last frame is its
//! reference boundary.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::numeric::Matrix;
use crate::ssae::BoundarySet;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub lexicon_size: usize,
    pub feature_dim: usize,
    pub min_word_len: usize,
    pub max_word_len: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub noise: f64,
    pub min_warp: f64,
    pub max_warp: f64,
    /// Std of the template random-walk increments.
    pub walk_step: f64,
    pub train_utterances: usize,
    pub test_utterances: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            lexicon_size: 20,
            feature_dim: 8,
            min_word_len: 8,
            max_word_len: 20,
            min_words: 3,
            max_words: 8,
            noise: 0.1,
            min_warp: 0.8,
            max_warp: 1.25,
            walk_step: 0.5,
            train_utterances: 500,
            test_utterances: 100,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.lexicon_size < 2 {
            return fail(format!("lexicon_size must be >= 2, got {}", self.lexicon_size));
        }
        if self.feature_dim == 0 {
            return fail("feature_dim must be > 0".into());
        }
        if self.min_word_len < 3 || self.min_word_len > self.max_word_len {
            return fail(format!(
                "word length range [{}, {}] invalid (min must be >= 3)",
                self.min_word_len, self.max_word_len
            ));
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return fail(format!("words per utterance range [{}, {}] invalid", self.min_words, self.max_words));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return fail(format!("noise must be >= 0, got {}", self.noise));
        }
        if !(self.min_warp > 0.0 && self.min_warp <= self.max_warp && self.max_warp.is_finite()) {
            return fail(format!("warp range [{}, {}] invalid", self.min_warp, self.max_warp));
        }
        if !(self.walk_step >= 0.0 && self.walk_step.is_finite()) {
            return fail(format!("walk_step must be >= 0, got {}", self.walk_step));
        }
        if self.train_utterances + self.test_utterances == 0 {
            return fail("corpus would be empty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthUtterance {
    pub features: FeatureMatrix,
    pub boundaries: BoundarySet,
    /// Lexicon ids in `1..=K`, one per segment.
    pub words: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    /// Template `k - 1` belongs to word id `k`.
    pub templates: Vec<Matrix>,
    pub utterances: Vec<SynthUtterance>,
    pub num_train: usize,
}

impl SynthCorpus {
    pub fn train(&self) -> &[SynthUtterance] {
        &self.utterances[..self.num_train]
    }

    pub fn test(&self) -> &[SynthUtterance] {
        &self.utterances[self.num_train..]
    }

    /// Mean reference boundaries per frame (segments over frames).
    pub fn word_rate(utts: &[SynthUtterance]) -> f64 {
        let segs: usize = utts.iter().map(|u| u.boundaries.num_segments()).sum();
        let frames: usize = utts.iter().map(|u| u.features.len()).sum();
        segs as f64 / frames.max(1) as f64
    }

    /// Mean per-utterance `N/T` of the reference segmentation.
    pub fn mean_segment_rate(utts: &[SynthUtterance]) -> f64 {
        let total: f64 = utts
            .iter()
            .map(|u| u.boundaries.num_segments() as f64 / u.features.len() as f64)
            .sum();
        total / utts.len().max(1) as f64
    }
}

fn template<R: Rng>(rng: &mut R, len: usize, dim: usize, step: f64) -> Matrix {
    let mut walk = Matrix::zeros(len, dim);
    for c in 0..dim {
        let mut x: f64 = StandardNormal.sample(rng);
        for r in 0..len {
            if r > 0 {
                let dx: f64 = StandardNormal.sample(rng);
                x += step * dx;
            }
            walk.set(r, c, x);
        }
    }
    // 3-frame moving average, shrinking at the edges
    Matrix::from_fn(len, dim, |r, c| {
        let lo = r.saturating_sub(1);
        let hi = (r + 1).min(len - 1);
        (lo..=hi).map(|k| walk.get(k, c)).sum::<f64>() / (hi - lo + 1) as f64
    })
}

/// Resamples `t` to `round(len · factor)` frames by linear interpolation.
pub fn time_warp(t: &Matrix, factor: f64) -> Matrix {
    let len = t.rows();
    let out_len = ((len as f64 * factor).round() as usize).max(1);
    if out_len == len {
        return t.clone();
    }
    let scale = if out_len > 1 {
        (len - 1) as f64 / (out_len - 1) as f64
    } else {
        0.0
    };
    Matrix::from_fn(out_len, t.cols(), |r, c| {
        let pos = r as f64 * scale;
        let i = (pos.floor() as usize).min(len - 1);
        let frac = pos - i as f64;
        if frac == 0.0 || i + 1 == len {
            t.get(i, c)
        } else {
            t.get(i, c) * (1.0 - frac) + t.get(i + 1, c) * frac
        }
    })
}

pub fn generate_corpus(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let templates: Vec<Matrix> = (0..config.lexicon_size)
        .map(|_| {
            let len = rng.random_range(config.min_word_len..=config.max_word_len);
            template(&mut rng, len, config.feature_dim, config.walk_step)
        })
        .collect();
    let noise = Normal::new(0.0, config.noise).map_err(|e| Error::Config(e.to_string()))?;
    let total = config.train_utterances + config.test_utterances;
    let mut utterances = Vec::with_capacity(total);
    for n in 0..total {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1 + n as u64);
        let count = rng.random_range(config.min_words..=config.max_words);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut ends = Vec::with_capacity(count);
        let mut words = Vec::with_capacity(count);
        for _ in 0..count {
            let k = rng.random_range(0..config.lexicon_size);
            let warp = if config.min_warp == config.max_warp {
                config.min_warp
            } else {
                rng.random_range(config.min_warp..=config.max_warp)
            };
            let w = time_warp(&templates[k], warp);
            for r in w.iter_rows() {
                let row: Vec<f64> = if config.noise > 0.0 {
                    r.iter().map(|v| v + noise.sample(&mut rng)).collect()
                } else {
                    r.to_vec()
                };
                rows.push(row);
            }
            ends.push(rows.len());
            words.push(k + 1);
        }
        let id = if n < config.train_utterances {
            format!("train-{n:04}")
        } else {
            format!("test-{:04}", n - config.train_utterances)
        };
        let frames = Matrix::from_rows(&rows)?;
        utterances.push(SynthUtterance {
            boundaries: BoundarySet::from_ends(frames.rows(), ends)?,
            features: FeatureMatrix::new(id, frames)?,
            words,
        });
    }
    Ok(SynthCorpus {
        templates,
        utterances,
        num_train: config.train_utterances,
    })
}

/// Query word id → ids of the utterances containing it.
pub fn relevance_table(utts: &[SynthUtterance], queries: &[usize]) -> BTreeMap<usize, BTreeSet<String>> {
    queries
        .iter()
        .map(|&q| {
            let docs = utts
                .iter()
                .filter(|u| u.words.contains(&q))
                .map(|u| u.features.id.clone())
                .collect();
            (q, docs)
        })
        .collect()
}
