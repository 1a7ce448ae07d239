//! Alternating training: phase 1 fits the encoder/decoder to the gate's
//! current segmentations, phase 2 updates the gate by policy gradient using
//! the frozen autoencoder's reconstruction error as the reward.

use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::gas::GasSequence;
use crate::numeric::{clip_global_norm, scale_all, AdamConfig, AdamState, Parameters};
use crate::ssae::{Action, Autoencoder, BoundarySet, DecoderFeed, GateTrace, ModelConfig, SegmentationGate, SsaeParams};

/// Features paired with their GAS.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub features: FeatureMatrix,
    pub gas: GasSequence,
}

impl Utterance {
    pub fn new(features: FeatureMatrix, gas: GasSequence) -> Result<Self> {
        if gas.len() != features.len() {
            return Err(Error::shape("utterance GAS rows", features.len(), gas.len()));
        }
        Ok(Self { features, gas })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgMode {
    Reinforce,
    Ppo,
}

impl FromStr for PgMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reinforce" => Ok(PgMode::Reinforce),
            "ppo" => Ok(PgMode::Ppo),
            _ => Err(Error::Config(format!("unknown policy-gradient mode `{s}`"))),
        }
    }
}

impl fmt::Display for PgMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PgMode::Reinforce => "reinforce",
            PgMode::Ppo => "ppo",
        })
    }
}

/// Which segmentations phase 1 trains the autoencoder on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase1Targets {
    /// A fresh gate sample per utterance per epoch.
    Sampled,
    Greedy,
}

impl FromStr for Phase1Targets {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sampled" => Ok(Phase1Targets::Sampled),
            "greedy" => Ok(Phase1Targets::Greedy),
            _ => Err(Error::Config(format!("unknown phase-1 target mode `{s}`"))),
        }
    }
}

impl fmt::Display for Phase1Targets {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase1Targets::Sampled => "sampled",
            Phase1Targets::Greedy => "greedy",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Weight on the segment-rate reward.
    pub lambda: f64,
    /// Sampled segmentations per utterance, also used for the baseline.
    pub samples: usize,
    pub lr_phase1: f64,
    pub lr_phase2: f64,
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub outer_iterations: usize,
    pub batch_size: usize,
    pub mode: PgMode,
    pub ppo_clip: f64,
    pub ppo_epochs: usize,
    pub grad_clip: f64,
    pub phase1_targets: Phase1Targets,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 5.0,
            samples: 5,
            lr_phase1: 1e-3,
            lr_phase2: 3e-4,
            phase1_epochs: 10,
            phase2_epochs: 2,
            outer_iterations: 5,
            batch_size: 16,
            mode: PgMode::Reinforce,
            ppo_clip: 0.2,
            ppo_epochs: 4,
            grad_clip: 5.0,
            phase1_targets: Phase1Targets::Sampled,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::Config(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if self.samples < 2 {
            return Err(Error::Config(format!("samples must be >= 2, got {}", self.samples)));
        }
        if !(self.ppo_clip > 0.0 && self.ppo_clip < 1.0) && self.mode == PgMode::Ppo {
            return Err(Error::Config(format!("ppo_clip must be in (0, 1), got {}", self.ppo_clip)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be > 0".into()));
        }
        for (name, lr) in [("lr_phase1", self.lr_phase1), ("lr_phase2", self.lr_phase2)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        Ok(())
    }
}

/// Reward of one sampled segmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reward {
    /// Negative reconstruction error summed over frames.
    pub r_mse: f64,
    /// Negative segment rate `−N/T`.
    pub r_nt: f64,
    /// `min(r_mse, λ·r_nt)`.
    pub r: f64,
}

/// Rewards of the M samples drawn for one utterance and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardRecord {
    pub samples: Vec<Reward>,
    pub baseline: f64,
}

impl RewardRecord {
    pub fn new(samples: Vec<Reward>) -> Self {
        let r: Vec<f64> = samples.iter().map(|s| s.r).collect();
        Self {
            baseline: compute_baseline(&r),
            samples,
        }
    }

    /// `r_m − baseline`, except that the last entry is the negated sum of
    /// the others, so the advantages sum (left to right) to exactly zero
    /// instead of to a rounding residue.
    pub fn advantages(&self) -> Vec<f64> {
        let mut a: Vec<f64> = self.samples.iter().map(|s| s.r - self.baseline).collect();
        if let Some((last, rest)) = a.split_last_mut() {
            if !rest.is_empty() {
                *last = -rest.iter().sum::<f64>();
            }
        }
        a
    }
}

pub fn compute_reward(recon_error: f64, n_segments: usize, n_frames: usize, lambda: f64) -> Reward {
    let r_mse = -recon_error;
    let r_nt = -(n_segments as f64) / (n_frames as f64);
    Reward {
        r_mse,
        r_nt,
        r: r_mse.min(lambda * r_nt),
    }
}

pub fn compute_baseline(rewards: &[f64]) -> f64 {
    if rewards.is_empty() {
        return 0.0;
    }
    rewards.iter().sum::<f64>() / rewards.len() as f64
}

/// Accumulates into `grads` the ascent direction
/// `(1/M) Σ_m coeff_m Σ_t ∇log π_t(a^m_t)` for one utterance.
pub fn reinforce_gradient(
    gate: &SegmentationGate,
    traces: &[(&GateTrace, &[Action])],
    coeffs: &[f64],
    grads: &mut SegmentationGate,
) {
    let m = traces.len() as f64;
    for ((trace, actions), &c) in traces.iter().zip(coeffs) {
        if c == 0.0 {
            continue;
        }
        let per_step = vec![c / m; trace.len()];
        gate.log_prob_backward(trace, actions, &per_step, grads);
    }
}

/// Per-step coefficients of the clipped surrogate's gradient with respect to
/// `log π_t(a_t)`: `ρ_t·A` where the unclipped branch is active, else 0.
pub fn ppo_coefficients(new_log: &[f64], old_log: &[f64], advantage: f64, clip: f64) -> Vec<f64> {
    new_log
        .iter()
        .zip(old_log)
        .map(|(n, o)| {
            let ratio = (n - o).exp();
            let active = if advantage >= 0.0 {
                ratio < 1.0 + clip
            } else {
                ratio > 1.0 - clip
            };
            if active {
                ratio * advantage
            } else {
                0.0
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PgDiagnostics {
    pub mean_r: f64,
    pub mean_r_mse: f64,
    pub mean_r_nt: f64,
    /// Mean `N/T` of the sampled segmentations.
    pub mean_nt: f64,
    pub grad_norm: f64,
    pub utterances: usize,
}

impl PgDiagnostics {
    fn add(&mut self, rec: &RewardRecord) {
        let m = rec.samples.len() as f64;
        for s in &rec.samples {
            self.mean_r += s.r / m;
            self.mean_r_mse += s.r_mse / m;
            self.mean_r_nt += s.r_nt / m;
            self.mean_nt -= s.r_nt / m;
        }
        self.utterances += 1;
    }

    fn merge(&mut self, other: &PgDiagnostics) {
        self.mean_r += other.mean_r;
        self.mean_r_mse += other.mean_r_mse;
        self.mean_r_nt += other.mean_r_nt;
        self.mean_nt += other.mean_nt;
        self.utterances += other.utterances;
    }

    fn finish(mut self) -> Self {
        let n = self.utterances.max(1) as f64;
        self.mean_r /= n;
        self.mean_r_mse /= n;
        self.mean_r_nt /= n;
        self.mean_nt /= n;
        self
    }
}

struct Episode {
    trace: GateTrace,
    actions: Vec<Action>,
}

/// Draws `M` segmentations and scores them with the frozen autoencoder.
fn sample_episodes(
    params: &SsaeParams,
    u: &Utterance,
    config: &TrainConfig,
    rng: &mut dyn RngCore,
) -> Result<(Vec<Episode>, RewardRecord)> {
    let mut episodes = Vec::with_capacity(config.samples);
    let mut rewards = Vec::with_capacity(config.samples);
    for _ in 0..config.samples {
        let r = params.gate.rollout(&u.features, &u.gas, Some(&mut *rng))?;
        let b = BoundarySet::from_actions(&r.actions)?;
        let err = params
            .autoencoder
            .utterance_error(&u.features, &b, params.config.decoder_feed)?;
        rewards.push(compute_reward(err, b.num_segments(), u.len(), config.lambda));
        episodes.push(Episode {
            trace: r.trace,
            actions: r.actions,
        });
    }
    Ok((episodes, RewardRecord::new(rewards)))
}

/// One gate update on a batch. The autoencoder is only read.
pub fn policy_gradient_step(
    params: &mut SsaeParams,
    batch: &[Utterance],
    config: &TrainConfig,
    adam: &mut AdamState,
    rng: &mut dyn RngCore,
) -> Result<PgDiagnostics> {
    let mut diag = PgDiagnostics::default();
    let mut sampled = Vec::with_capacity(batch.len());
    for u in batch {
        let (eps, rec) = sample_episodes(params, u, config, rng)?;
        diag.add(&rec);
        sampled.push((eps, rec.advantages()));
    }
    let scale = 1.0 / batch.len().max(1) as f64;
    match config.mode {
        PgMode::Reinforce => {
            let mut grads = params.gate.zeros_like();
            for (eps, adv) in &sampled {
                let traces: Vec<(&GateTrace, &[Action])> =
                    eps.iter().map(|e| (&e.trace, e.actions.as_slice())).collect();
                reinforce_gradient(&params.gate, &traces, adv, &mut grads);
            }
            diag.grad_norm = apply_ascent(&mut params.gate, grads, scale, config.grad_clip, adam)?;
        }
        PgMode::Ppo => {
            let old: Vec<Vec<Vec<f64>>> = sampled
                .iter()
                .map(|(eps, _)| eps.iter().map(|e| e.trace.log_probs(&e.actions)).collect())
                .collect();
            for epoch in 0..config.ppo_epochs.max(1) {
                let mut grads = params.gate.zeros_like();
                for ((eps, adv), (u, old_u)) in sampled.iter().zip(batch.iter().zip(&old)) {
                    let m = eps.len() as f64;
                    for ((e, &a), old_log) in eps.iter().zip(adv).zip(old_u) {
                        // the first epoch runs on the sampling policy itself
                        let fresh;
                        let trace = if epoch == 0 {
                            &e.trace
                        } else {
                            fresh = params.gate.forward(&u.features, &u.gas, &e.actions)?;
                            &fresh
                        };
                        let coeffs: Vec<f64> = ppo_coefficients(&trace.log_probs(&e.actions), old_log, a, config.ppo_clip)
                            .into_iter()
                            .map(|c| c / m)
                            .collect();
                        params.gate.log_prob_backward(trace, &e.actions, &coeffs, &mut grads);
                    }
                }
                diag.grad_norm = apply_ascent(&mut params.gate, grads, scale, config.grad_clip, adam)?;
            }
        }
    }
    Ok(diag.finish())
}

/// Gradient ascent through Adam: negates, scales, clips and applies.
fn apply_ascent(
    gate: &mut SegmentationGate,
    mut grads: SegmentationGate,
    scale: f64,
    clip: f64,
    adam: &mut AdamState,
) -> Result<f64> {
    scale_all(&mut grads, -scale);
    let norm = clip_global_norm(&mut grads, clip);
    if !norm.is_finite() {
        return Err(Error::Training {
            param: "gate".into(),
            reason: "non-finite policy gradient".into(),
        });
    }
    adam.update(gate, &grads)?;
    Ok(norm)
}

fn phase1_targets(
    params: &SsaeParams,
    corpus: &[Utterance],
    mode: Phase1Targets,
    rng: &mut dyn RngCore,
) -> Result<Vec<BoundarySet>> {
    corpus
        .iter()
        .map(|u| match mode {
            Phase1Targets::Greedy => params.segment(&u.features, &u.gas),
            Phase1Targets::Sampled => {
                let r = params.gate.rollout(&u.features, &u.gas, Some(&mut *rng))?;
                BoundarySet::from_actions(&r.actions)
            }
        })
        .collect()
}

/// Trains the encoder and decoder with the gate frozen. Returns the mean
/// per-utterance reconstruction loss of every epoch.
pub fn train_phase1(
    params: &mut SsaeParams,
    corpus: &[Utterance],
    config: &TrainConfig,
    targets: Phase1Targets,
    rng: &mut dyn RngCore,
) -> Result<Vec<f64>> {
    if corpus.is_empty() {
        return Err(Error::Input("phase-1 corpus is empty".into()));
    }
    let feed = params.config.decoder_feed;
    let mut adam = AdamState::new(&params.autoencoder, AdamConfig::with_lr(config.lr_phase1));
    let features: Vec<&FeatureMatrix> = corpus.iter().map(|u| &u.features).collect();
    let mut curve = Vec::with_capacity(config.phase1_epochs);
    // the gate is frozen, so greedy targets never change
    let greedy = match targets {
        Phase1Targets::Greedy => Some(phase1_targets(params, corpus, targets, rng)?),
        Phase1Targets::Sampled => None,
    };
    for _ in 0..config.phase1_epochs {
        let sampled;
        let bounds = match &greedy {
            Some(b) => b,
            None => {
                sampled = phase1_targets(params, corpus, targets, rng)?;
                &sampled
            }
        };
        curve.push(autoencoder_epoch(&mut params.autoencoder, &mut adam, &features, bounds, feed, config)?);
    }
    Ok(curve)
}

/// One pass of reconstruction training over fixed segmentations. Returns
/// the mean per-utterance loss.
pub fn autoencoder_epoch(
    ae: &mut Autoencoder,
    adam: &mut AdamState,
    features: &[&FeatureMatrix],
    bounds: &[BoundarySet],
    feed: DecoderFeed,
    config: &TrainConfig,
) -> Result<f64> {
    if features.len() != bounds.len() {
        return Err(Error::shape("autoencoder_epoch segmentations", features.len(), bounds.len()));
    }
    let mut total = 0.0;
    for (batch, b) in features.chunks(config.batch_size).zip(bounds.chunks(config.batch_size)) {
        let mut grads = ae.zeros_like();
        for (f, b) in batch.iter().zip(b) {
            total += ae.loss_and_grad(f, b, feed, &mut grads)?;
        }
        scale_all(&mut grads, 1.0 / batch.len() as f64);
        clip_global_norm(&mut grads, config.grad_clip);
        adam.update(ae, &grads)?;
    }
    let mean = total / features.len().max(1) as f64;
    if !mean.is_finite() {
        return Err(Error::Training {
            param: "autoencoder".into(),
            reason: "reconstruction loss diverged".into(),
        });
    }
    Ok(mean)
}

/// Trains an autoencoder on fixed segmentations (for example reference
/// boundaries) for `config.phase1_epochs` epochs.
pub fn fit_autoencoder(
    ae: &mut Autoencoder,
    features: &[&FeatureMatrix],
    bounds: &[BoundarySet],
    feed: DecoderFeed,
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    let mut adam = AdamState::new(&*ae, AdamConfig::with_lr(config.lr_phase1));
    (0..config.phase1_epochs)
        .map(|_| autoencoder_epoch(ae, &mut adam, features, bounds, feed, config))
        .collect()
}

/// One pass of gate updates over the corpus.
pub fn train_phase2(
    params: &mut SsaeParams,
    corpus: &[Utterance],
    config: &TrainConfig,
    adam: &mut AdamState,
    rng: &mut dyn RngCore,
) -> Result<PgDiagnostics> {
    let mut total = PgDiagnostics::default();
    for batch in corpus.chunks(config.batch_size) {
        let d = policy_gradient_step(params, batch, config, adam, rng)?;
        let n = d.utterances as f64;
        total.merge(&PgDiagnostics {
            mean_r: d.mean_r * n,
            mean_r_mse: d.mean_r_mse * n,
            mean_r_nt: d.mean_r_nt * n,
            mean_nt: d.mean_nt * n,
            grad_norm: 0.0,
            utterances: d.utterances,
        });
        total.grad_norm = d.grad_norm;
    }
    Ok(total.finish())
}

/// Fresh encoder/decoder weights for outer iteration `iteration`.
/// Every iteration has its own stream of the seeded generator.
pub fn init_autoencoder(model: &ModelConfig, seed: u64, iteration: usize) -> Autoencoder {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + iteration as u64);
    Autoencoder::new(model.feature_dim, model.hidden_dim, &mut rng)
}

pub fn init_params(model: &ModelConfig, seed: u64) -> SsaeParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = SsaeParams::new(*model, &mut rng);
    params.autoencoder = init_autoencoder(model, seed, 0);
    params
}

/// Mean greedy `N/T` over a corpus.
pub fn greedy_segment_rate(params: &SsaeParams, corpus: &[Utterance]) -> Result<f64> {
    let mut total = 0.0;
    for u in corpus {
        let b = params.segment(&u.features, &u.gas)?;
        total += b.num_segments() as f64 / u.len() as f64;
    }
    Ok(total / corpus.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub phase1_loss: f64,
    pub mean_r: f64,
    pub mean_r_mse: f64,
    pub mean_r_nt: f64,
    /// `N/T` of the sampled segmentations seen in phase 2.
    pub sampled_nt: f64,
    /// `N/T` of greedy segmentations after the gate update.
    pub greedy_nt: f64,
}

impl IterationMetrics {
    /// Metrics log records: one per phase.
    pub fn log_lines(&self) -> [String; 2] {
        [
            format!(
                "iteration={} phase=1 loss={:.6}",
                self.iteration, self.phase1_loss
            ),
            format!(
                "iteration={} phase=2 mean_r={:.6} mean_r_mse={:.6} mean_r_nt={:.6} sampled_nt={:.6} greedy_nt={:.6}",
                self.iteration, self.mean_r, self.mean_r_mse, self.mean_r_nt, self.sampled_nt, self.greedy_nt
            ),
        ]
    }
}

/// Full alternating schedule from a fresh model. After the last gate update
/// the autoencoder is retrained once more on greedy segmentations so that
/// the returned embeddings match the final gate.
pub fn train_iterative(
    corpus: &[Utterance],
    model: &ModelConfig,
    config: &TrainConfig,
    on_iteration: &mut dyn FnMut(&IterationMetrics, &SsaeParams),
) -> Result<SsaeParams> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::Input("training corpus is empty".into()));
    }
    let mut params = init_params(model, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(u64::MAX);
    let mut gate_adam = AdamState::new(&params.gate, AdamConfig::with_lr(config.lr_phase2));
    for it in 0..config.outer_iterations {
        params.autoencoder = init_autoencoder(model, config.seed, it);
        let curve = train_phase1(&mut params, corpus, config, config.phase1_targets, &mut rng)?;
        let mut diag = PgDiagnostics::default();
        for _ in 0..config.phase2_epochs {
            diag = train_phase2(&mut params, corpus, config, &mut gate_adam, &mut rng)?;
        }
        let metrics = IterationMetrics {
            iteration: it + 1,
            phase1_loss: curve.last().copied().unwrap_or(f64::NAN),
            mean_r: diag.mean_r,
            mean_r_mse: diag.mean_r_mse,
            mean_r_nt: diag.mean_r_nt,
            sampled_nt: diag.mean_nt,
            greedy_nt: greedy_segment_rate(&params, corpus)?,
        };
        on_iteration(&metrics, &params);
    }
    params.autoencoder = init_autoencoder(model, config.seed, config.outer_iterations);
    train_phase1(&mut params, corpus, config, Phase1Targets::Greedy, &mut rng)?;
    Ok(params)
}
