//! End-to-end evaluation on a synthetic corpus: segmentation against the
//! reference boundaries and query-by-example retrieval over the test split.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::{
    mean_average_precision, random_segment, rank_by_score, segmentation_prf, RetrievalScore, SegmentationScore,
};
use crate::features::FeatureMatrix;
use crate::gas::{gas_segment, train_gas_autoencoder, GasConfig, GasModel};
use crate::matching::{dtw_score, subsequence_score};
use crate::ssae::{Autoencoder, BoundarySet, ModelConfig, SsaeParams};
use crate::synth::{generate_corpus, relevance_table, SynthConfig, SynthCorpus, SynthUtterance};
use crate::trainer::{fit_autoencoder, init_autoencoder, train_iterative, IterationMetrics, PgMode, TrainConfig, Utterance};

/// Pairs every utterance with its GAS.
pub fn attach_gas(features: &[&FeatureMatrix], gas: &GasModel, use_gas: bool) -> Result<Vec<Utterance>> {
    features
        .iter()
        .map(|f| {
            let g = if use_gas {
                gas.extract(f)?
            } else {
                crate::gas::GasSequence::empty(f.len())
            };
            Utterance::new((*f).clone(), g)
        })
        .collect()
}

/// Pooled boundary scores of greedy SSAE segmentation.
pub fn ssae_segmentation(params: &SsaeParams, utts: &[Utterance], refs: &[&BoundarySet], tol: usize) -> Result<SegmentationScore> {
    let mut scores = Vec::with_capacity(utts.len());
    for (u, r) in utts.iter().zip(refs) {
        let b = params.segment(&u.features, &u.gas)?;
        scores.push(segmentation_prf(&b, r, tol)?);
    }
    Ok(SegmentationScore::pooled(&scores))
}

/// Mean gate segment probability on frames within one frame of a reference
/// boundary, and on all other frames.
pub fn boundary_contrast(params: &SsaeParams, utts: &[Utterance], refs: &[&BoundarySet]) -> Result<(f64, f64)> {
    let (mut near, mut n_near, mut far, mut n_far) = (0.0, 0usize, 0.0, 0usize);
    for (u, r) in utts.iter().zip(refs) {
        let rollout = params.gate.rollout(&u.features, &u.gas, None)?;
        for (t, p) in rollout.trace.probs().iter().enumerate() {
            let frame = t + 1;
            if r.interior().iter().any(|&b| b.abs_diff(frame) <= 1) {
                near += p[0];
                n_near += 1;
            } else {
                far += p[0];
                n_far += 1;
            }
        }
    }
    Ok((near / n_near.max(1) as f64, far / n_far.max(1) as f64))
}

pub fn gas_segmentation(utts: &[Utterance], refs: &[&BoundarySet], min_gap: usize, tol: usize) -> Result<SegmentationScore> {
    let mut scores = Vec::with_capacity(utts.len());
    for (u, r) in utts.iter().zip(refs) {
        let b = gas_segment(&u.gas, None, min_gap)?;
        scores.push(segmentation_prf(&b, r, tol)?);
    }
    Ok(SegmentationScore::pooled(&scores))
}

/// Bernoulli boundaries at `rate`, one derived seed per utterance.
pub fn random_segmentation(refs: &[&BoundarySet], rate: f64, seed: u64, tol: usize) -> Result<SegmentationScore> {
    let mut scores = Vec::with_capacity(refs.len());
    for (i, r) in refs.iter().enumerate() {
        let b = random_segment(r.num_frames(), rate, seed.wrapping_add(i as u64))?;
        scores.push(segmentation_prf(&b, r, tol)?);
    }
    Ok(SegmentationScore::pooled(&scores))
}

/// A spoken query cut out of a training utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub id: String,
    pub word: usize,
    pub features: FeatureMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StdConfig {
    pub query_words: usize,
    pub examples_per_word: usize,
    pub seed: u64,
}

impl Default for StdConfig {
    fn default() -> Self {
        Self {
            query_words: 5,
            examples_per_word: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StdTask {
    pub queries: Vec<Query>,
    pub documents: Vec<FeatureMatrix>,
    /// Query id → relevant document ids.
    pub relevance: BTreeMap<String, HashSet<String>>,
}

impl StdTask {
    /// Picks query words that occur in the test split, cuts examples of each
    /// from the training split by reference boundaries, and uses the test
    /// utterances as documents.
    pub fn build(corpus: &SynthCorpus, config: &StdConfig) -> Result<Self> {
        Self::from_splits(corpus.train(), corpus.test(), config)
    }

    /// As [`StdTask::build`], for any pair of labelled splits.
    pub fn from_splits(train: &[SynthUtterance], test: &[SynthUtterance], config: &StdConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut candidates: Vec<usize> = test
            .iter()
            .flat_map(|u| u.words.iter().copied())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        candidates.shuffle(&mut rng);
        candidates.truncate(config.query_words);
        candidates.sort_unstable();
        if candidates.is_empty() {
            return Err(Error::Input("no word occurs in the test split".into()));
        }
        let table = relevance_table(test, &candidates);
        let mut queries = Vec::new();
        for &w in &candidates {
            let mut occurrences: Vec<(&SynthUtterance, usize)> = train
                .iter()
                .flat_map(|u| u.words.iter().enumerate().filter(|(_, &x)| x == w).map(move |(n, _)| (u, n)))
                .collect();
            occurrences.shuffle(&mut rng);
            for (i, (u, n)) in occurrences.into_iter().take(config.examples_per_word).enumerate() {
                let (s, e) = u.boundaries.segments().nth(n).expect("segment index from word list");
                queries.push(Query {
                    id: format!("q{w:02}-{i}"),
                    word: w,
                    features: FeatureMatrix::new(format!("q{w:02}-{i}"), u.features.frames.slice_rows(s - 1, e))?,
                });
            }
        }
        let relevance = queries
            .iter()
            .map(|q| (q.id.clone(), table[&q.word].iter().cloned().collect()))
            .collect();
        Ok(Self {
            queries,
            documents: test.iter().map(|u| u.features.clone()).collect(),
            relevance,
        })
    }

    /// Ranks every document for every query by `score` and computes MAP.
    pub fn evaluate(&self, mut score: impl FnMut(&Query, usize) -> Result<f64>) -> Result<RetrievalScore> {
        let mut rankings = BTreeMap::new();
        for q in &self.queries {
            let mut scored = Vec::with_capacity(self.documents.len());
            for (i, d) in self.documents.iter().enumerate() {
                scored.push((d.id.clone(), score(q, i)?));
            }
            rank_by_score(&mut scored);
            rankings.insert(q.id.clone(), scored.into_iter().map(|(id, _)| id).collect());
        }
        mean_average_precision(&rankings, &self.relevance)
    }

    pub fn evaluate_ssae(&self, params: &SsaeParams, gas: &GasModel, use_gas: bool) -> Result<RetrievalScore> {
        let embed = |f: &FeatureMatrix| -> Result<_> {
            let u = &attach_gas(&[f], gas, use_gas)?[0];
            Ok(params.embed(&u.features, &u.gas)?.1)
        };
        let docs: Vec<_> = self.documents.iter().map(embed).collect::<Result<_>>()?;
        let queries: BTreeMap<&str, _> = self
            .queries
            .iter()
            .map(|q| Ok((q.id.as_str(), embed(&q.features)?)))
            .collect::<Result<_>>()?;
        self.evaluate(|q, i| Ok(subsequence_score(&queries[q.id.as_str()], &docs[i])?.score))
    }

    /// Embeddings from reference segmentations: a query is one segment.
    pub fn evaluate_oracle(&self, ae: &Autoencoder, doc_bounds: &[&BoundarySet]) -> Result<RetrievalScore> {
        let docs: Vec<_> = self
            .documents
            .iter()
            .zip(doc_bounds)
            .map(|(d, b)| ae.encode_segments(d, b))
            .collect::<Result<_>>()?;
        let queries: BTreeMap<&str, _> = self
            .queries
            .iter()
            .map(|q| Ok((q.id.as_str(), ae.encode_segments(&q.features, &BoundarySet::whole(q.features.len()))?)))
            .collect::<Result<_>>()?;
        self.evaluate(|q, i| Ok(subsequence_score(&queries[q.id.as_str()], &docs[i])?.score))
    }

    pub fn evaluate_dtw(&self) -> Result<RetrievalScore> {
        self.evaluate(|q, i| dtw_score(&q.features, &self.documents[i]))
    }

    pub fn evaluate_random(&self, seed: u64) -> Result<RetrievalScore> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.evaluate(|_, _| Ok(rng.random::<f64>()))
    }
}

/// Everything one desk-scale run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct DeskConfig {
    pub synth: SynthConfig,
    pub gas: GasConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub std: StdConfig,
    /// Feed GAS into the gate state.
    pub use_gas: bool,
    pub tolerance: usize,
    pub gas_min_gap: usize,
}

impl DeskConfig {
    /// Small model sized for a single CPU core, with every seed derived
    /// from `seed`.
    pub fn small(seed: u64) -> Self {
        let gas = GasConfig {
            hidden_dim: 16,
            window: 20,
            epochs: 10,
            batch_size: 16,
            learning_rate: 3e-3,
            grad_clip: 5.0,
            seed,
        };
        Self {
            synth: SynthConfig {
                seed,
                ..SynthConfig::default()
            },
            model: ModelConfig {
                feature_dim: 8,
                gas_dim: gas.hidden_dim,
                hidden_dim: 32,
                gate_hidden: 32,
                gate_layers: 2,
                decoder_feed: Default::default(),
            },
            gas,
            // 8-dim features reconstruct cheaply, so the per-frame penalty
            // has to be large before segment count matters to the reward.
            train: TrainConfig {
                lambda: 300.0,
                lr_phase1: 3e-3,
                lr_phase2: 3e-3,
                phase1_epochs: 10,
                phase2_epochs: 2,
                outer_iterations: 6,
                batch_size: 4,
                mode: PgMode::Ppo,
                seed,
                ..TrainConfig::default()
            },
            std: StdConfig {
                seed,
                ..StdConfig::default()
            },
            use_gas: true,
            tolerance: crate::eval::DEFAULT_TOLERANCE,
            gas_min_gap: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeskResult {
    pub true_rate: f64,
    pub iterations: Vec<IterationMetrics>,
    /// Greedy test-split F1 after each outer iteration.
    pub f1_curve: Vec<f64>,
    pub ssae_seg: SegmentationScore,
    pub gas_seg: SegmentationScore,
    pub random_seg: SegmentationScore,
    pub map_ssae: f64,
    pub map_oracle: f64,
    pub map_dtw: f64,
    pub map_random: f64,
    pub gas_curve: Vec<f64>,
    pub model: SsaeParams,
    pub gas_model: GasModel,
    pub corpus: SynthCorpus,
    pub task: StdTask,
}

pub fn run_desk(config: &DeskConfig, log: &mut dyn FnMut(&str)) -> Result<DeskResult> {
    let corpus = generate_corpus(&config.synth)?;
    let train_feats: Vec<&FeatureMatrix> = corpus.train().iter().map(|u| &u.features).collect();
    let test_feats: Vec<&FeatureMatrix> = corpus.test().iter().map(|u| &u.features).collect();
    let train_refs: Vec<&BoundarySet> = corpus.train().iter().map(|u| &u.boundaries).collect();
    let test_refs: Vec<&BoundarySet> = corpus.test().iter().map(|u| &u.boundaries).collect();
    let true_rate = SynthCorpus::mean_segment_rate(corpus.train());

    let owned: Vec<FeatureMatrix> = train_feats.iter().map(|f| (*f).clone()).collect();
    let (gas, gas_curve) = train_gas_autoencoder(&owned, &config.gas)?;
    log(&format!("gas mse {:.4} -> {:.4}", gas_curve[0], gas_curve[gas_curve.len() - 1]));
    let train = attach_gas(&train_feats, &gas, config.use_gas)?;
    let test = attach_gas(&test_feats, &gas, true)?;
    let test_gate = attach_gas(&test_feats, &gas, config.use_gas)?;

    let mut f1_curve = Vec::new();
    let mut iterations = Vec::new();
    let mut failure = None;
    let model = ModelConfig {
        gas_dim: if config.use_gas { gas.hidden_dim() } else { 0 },
        ..config.model
    };
    let params = train_iterative(&train, &model, &config.train, &mut |m, p| {
        let scored = ssae_segmentation(p, &test_gate, &test_refs, config.tolerance)
            .and_then(|s| Ok((s, boundary_contrast(p, &test_gate, &test_refs)?)));
        match scored {
            Ok((s, (near, far))) => {
                log(&format!(
                    "iter {} loss {:.4} r {:.4} r_mse {:.4} nt {:.4} greedy_nt {:.4} f1 {:.4} p {:.4} r {:.4} p_seg near {:.3} far {:.3}",
                    m.iteration, m.phase1_loss, m.mean_r, m.mean_r_mse, m.sampled_nt, m.greedy_nt, s.f1, s.precision, s.recall, near, far
                ));
                f1_curve.push(s.f1);
            }
            Err(e) => failure = Some(e),
        }
        iterations.push(m.clone());
    })?;
    if let Some(e) = failure {
        return Err(e);
    }

    let ssae_seg = ssae_segmentation(&params, &test_gate, &test_refs, config.tolerance)?;
    let gas_seg = gas_segmentation(&test, &test_refs, config.gas_min_gap, config.tolerance)?;
    let random_seg = random_segmentation(&test_refs, SynthCorpus::word_rate(corpus.train()), config.synth.seed, config.tolerance)?;

    let task = StdTask::build(&corpus, &config.std)?;
    let map_ssae = task.evaluate_ssae(&params, &gas, config.use_gas)?.map;
    let mut oracle = init_autoencoder(&model, config.train.seed ^ 0x0c1e, 0);
    let bounds: Vec<BoundarySet> = train_refs.iter().map(|b| (*b).clone()).collect();
    fit_autoencoder(&mut oracle, &train_feats, &bounds, config.model.decoder_feed, &config.train)?;
    let map_oracle = task.evaluate_oracle(&oracle, &test_refs)?.map;
    let map_dtw = task.evaluate_dtw()?.map;
    let map_random = task.evaluate_random(config.std.seed)?.map;
    log(&format!(
        "seg f1 ssae {:.4} gas {:.4} random {:.4}; map ssae {:.4} oracle {:.4} dtw {:.4} random {:.4}",
        ssae_seg.f1, gas_seg.f1, random_seg.f1, map_ssae, map_oracle, map_dtw, map_random
    ));
    Ok(DeskResult {
        true_rate,
        iterations,
        f1_curve,
        ssae_seg,
        gas_seg,
        random_seg,
        map_ssae,
        map_oracle,
        map_dtw,
        map_random,
        gas_curve,
        model: params,
        gas_model: gas,
        corpus,
        task,
    })
}
