//! Gate activation signals (GAS).
//!
//! A GRU sequence autoencoder is pre-trained on fixed-length windows of
//! unlabeled features. Running its encoder over a whole utterance and
//! recording the update gate at every frame gives the per-frame GAS vector
//! fed into the segmentation gate state. The same signal, averaged over
//! units and differenced in time, is peak-picked to give a stand-alone
//! segmentation baseline.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::numeric::{
    accumulate, clip_global_norm, scale_all, AdamConfig, AdamState, GruCell, GruStep, Linear, Matrix,
    Parameters,
};
use crate::ssae::BoundarySet;

/// Per-frame update-gate activations, `T × d_g`, every value in (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct GasSequence {
    values: Matrix,
}

impl GasSequence {
    pub fn new(values: Matrix) -> Result<Self> {
        if let Some(v) = values.as_slice().iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
            return Err(Error::Domain(format!("GAS value {v} outside (0, 1)")));
        }
        Ok(Self { values })
    }

    /// A zero-width signal for models run without GAS input.
    pub fn empty(frames: usize) -> Self {
        Self {
            values: Matrix::zeros(frames, 0),
        }
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.values.row(t)
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    /// `|m_t − m_{t−1}|` where `m_t` is the unit-mean gate at frame `t`;
    /// the first entry is 0.
    pub fn mean_difference(&self) -> Vec<f64> {
        let d = self.dim().max(1) as f64;
        let means: Vec<f64> = self.values.iter_rows().map(|r| r.iter().sum::<f64>() / d).collect();
        let mut diff = vec![0.0; means.len()];
        for t in 1..means.len() {
            diff[t] = (means[t] - means[t - 1]).abs();
        }
        diff
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GasConfig {
    pub hidden_dim: usize,
    /// Training window length in frames; windows hop by half this.
    pub window: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for GasConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 100,
            window: 20,
            epochs: 20,
            batch_size: 16,
            learning_rate: 3e-3,
            grad_clip: 5.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GasModel {
    pub encoder: GruCell,
    pub decoder: GruCell,
    pub readout: Linear,
    pub trained: bool,
}

struct Window<'a> {
    frames: &'a Matrix,
    start: usize,
    end: usize,
}

impl GasModel {
    pub fn new(feature_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            encoder: GruCell::new(feature_dim, hidden_dim, &mut rng),
            decoder: GruCell::new(feature_dim, hidden_dim, &mut rng),
            readout: Linear::new(hidden_dim, feature_dim, &mut rng),
            trained: false,
        }
    }

    /// All-zero weights: every gate sits at σ(0) = 0.5. Usable for
    /// extraction as a fixed null model.
    pub fn zeros(feature_dim: usize, hidden_dim: usize) -> Self {
        Self {
            encoder: GruCell::zeros(feature_dim, hidden_dim),
            decoder: GruCell::zeros(feature_dim, hidden_dim),
            readout: Linear::zeros(hidden_dim, feature_dim),
            trained: true,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.encoder.hidden_dim()
    }

    /// Update-gate activations of the encoder run over the whole utterance.
    pub fn extract(&self, f: &FeatureMatrix) -> Result<GasSequence> {
        if !self.trained {
            return Err(Error::Input("GAS model has not been trained".into()));
        }
        if f.dim() != self.feature_dim() {
            return Err(Error::shape("extract_gas features", self.feature_dim(), f.dim()));
        }
        let hd = self.hidden_dim();
        let mut h = vec![0.0; hd];
        let mut out = Matrix::zeros(f.len(), hd);
        for t in 0..f.len() {
            let s = self.encoder.forward(&h, f.frame(t));
            for (o, z) in out.row_mut(t).iter_mut().zip(s.update_gate()) {
                // saturated sigmoids round to exactly 0 or 1 in f64
                *o = z.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
            }
            h = s.h;
        }
        GasSequence::new(out)
    }

    /// Window reconstruction error `Σ_t (1/d)‖x̂_t − x_t‖²`, with gradients
    /// accumulated into `grads` when given.
    fn window_loss(&self, w: &Window<'_>, grads: Option<&mut GasModel>) -> f64 {
        let hd = self.hidden_dim();
        let d = self.feature_dim();
        let mut enc: Vec<GruStep> = Vec::with_capacity(w.end - w.start);
        let mut h = vec![0.0; hd];
        for t in w.start..w.end {
            let s = self.encoder.forward(&h, w.frames.row(t));
            h = s.h.clone();
            enc.push(s);
        }
        // decoder: backward order, teacher-forced with the previous true frame
        let zero = vec![0.0; d];
        let mut dec: Vec<GruStep> = Vec::with_capacity(enc.len());
        let mut outs: Vec<Vec<f64>> = Vec::with_capacity(enc.len());
        let mut loss = 0.0;
        for (k, t) in (w.start..w.end).rev().enumerate() {
            let input = if k == 0 { &zero[..] } else { w.frames.row(t + 1) };
            let s = self.decoder.forward(&h, input);
            h = s.h.clone();
            let y = self.readout.forward(&s.h);
            loss += y
                .iter()
                .zip(w.frames.row(t))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / d as f64;
            outs.push(y);
            dec.push(s);
        }
        let Some(grads) = grads else {
            return loss;
        };
        let mut dh = vec![0.0; hd];
        for (k, t) in (w.start..w.end).rev().enumerate().collect::<Vec<_>>().into_iter().rev() {
            let dy: Vec<f64> = outs[k]
                .iter()
                .zip(w.frames.row(t))
                .map(|(a, b)| 2.0 * (a - b) / d as f64)
                .collect();
            self.readout.backward(&dec[k].h, &dy, &mut grads.readout, Some(&mut dh));
            dh = self.decoder.backward(&dec[k], &dh, &mut grads.decoder, None);
        }
        for s in enc.iter().rev() {
            dh = self.encoder.backward(s, &dh, &mut grads.encoder, None);
        }
        loss
    }

    /// Mean per-frame reconstruction error over the training windows of
    /// `corpus`.
    /// Squared reconstruction error of `frames[range]` as one window, with
    /// its gradient accumulated into `grads` when given.
    pub fn window_loss_grad(&self, frames: &Matrix, range: std::ops::Range<usize>, grads: Option<&mut GasModel>) -> f64 {
        let w = Window {
            frames,
            start: range.start,
            end: range.end,
        };
        self.window_loss(&w, grads)
    }

    pub fn reconstruction_mse(&self, corpus: &[FeatureMatrix], window: usize) -> f64 {
        let windows = windows(corpus, window);
        let frames: usize = windows.iter().map(|w| w.end - w.start).sum();
        windows.iter().map(|w| self.window_loss(w, None)).sum::<f64>() / frames.max(1) as f64
    }
}

impl Parameters for GasModel {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut v = Vec::new();
        for (p, t) in [
            ("encoder", self.encoder.tensors()),
            ("decoder", self.decoder.tensors()),
            ("readout", self.readout.tensors()),
        ] {
            v.extend(t.into_iter().map(|(n, m)| (format!("{p}.{n}"), m)));
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = self.encoder.tensors_mut();
        v.extend(self.decoder.tensors_mut());
        v.extend(self.readout.tensors_mut());
        v
    }
}

fn windows(corpus: &[FeatureMatrix], window: usize) -> Vec<Window<'_>> {
    let window = window.max(1);
    let hop = (window / 2).max(1);
    let mut out = Vec::new();
    for f in corpus {
        let t = f.len();
        if t <= window {
            out.push(Window {
                frames: &f.frames,
                start: 0,
                end: t,
            });
            continue;
        }
        let mut s = 0;
        loop {
            let e = (s + window).min(t);
            out.push(Window {
                frames: &f.frames,
                start: e - window,
                end: e,
            });
            if e == t {
                break;
            }
            s += hop;
        }
    }
    out
}

/// Trains the GRU autoencoder. Returns the model and the mean per-frame
/// training error after every epoch (entry 0 is the untrained error).
pub fn train_gas_autoencoder(corpus: &[FeatureMatrix], config: &GasConfig) -> Result<(GasModel, Vec<f64>)> {
    let Some(first) = corpus.first() else {
        return Err(Error::Input("GAS training corpus is empty".into()));
    };
    let d = first.dim();
    if let Some(bad) = corpus.iter().find(|f| f.dim() != d) {
        return Err(Error::shape("GAS corpus feature dim", d, format!("{} in `{}`", bad.dim(), bad.id)));
    }
    let mut model = GasModel::new(d, config.hidden_dim, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6a5);
    let wins = windows(corpus, config.window);
    let total_frames: usize = wins.iter().map(|w| w.end - w.start).sum();
    let mut adam = AdamState::new(&model, AdamConfig::with_lr(config.learning_rate));
    let mut curve = vec![wins.iter().map(|w| model.window_loss(w, None)).sum::<f64>() / total_frames as f64];
    let mut order: Vec<usize> = (0..wins.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size.max(1)) {
            let mut grads = model.zeros_like();
            let mut frames = 0;
            for &i in batch {
                let mut g = model.zeros_like();
                epoch_loss += model.window_loss(&wins[i], Some(&mut g));
                accumulate(&mut grads, 1.0, &g);
                frames += wins[i].end - wins[i].start;
            }
            scale_all(&mut grads, 1.0 / frames as f64);
            clip_global_norm(&mut grads, config.grad_clip);
            adam.update(&mut model, &grads)?;
        }
        let mse = epoch_loss / total_frames as f64;
        if !mse.is_finite() {
            return Err(Error::Training {
                param: "gas".into(),
                reason: "reconstruction loss diverged".into(),
            });
        }
        curve.push(mse);
    }
    model.trained = true;
    Ok((model, curve))
}

/// Peak-picks the unit-mean GAS difference signal.
///
/// A frame becomes a boundary when its difference value is a local maximum
/// strictly above `threshold` (default: mean + 1 std of the signal over the
/// utterance). Peaks closer than `min_gap` frames to a larger kept peak are
/// dropped.
pub fn gas_segment(g: &GasSequence, threshold: Option<f64>, min_gap: usize) -> Result<BoundarySet> {
    let t_len = g.len();
    if t_len == 0 {
        return Err(Error::Input("empty GAS sequence".into()));
    }
    let diff = g.mean_difference();
    let threshold = threshold.unwrap_or_else(|| {
        let tail = &diff[1.min(diff.len())..];
        if tail.is_empty() {
            return f64::INFINITY;
        }
        let n = tail.len() as f64;
        let mean = tail.iter().sum::<f64>() / n;
        let var = tail.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        mean + var.sqrt()
    });
    let mut peaks: Vec<usize> = (1..t_len)
        .filter(|&t| {
            let v = diff[t];
            let left = diff[t - 1];
            let right = diff.get(t + 1).copied().unwrap_or(f64::NEG_INFINITY);
            v > threshold && v > left && v >= right
        })
        .collect();
    peaks.sort_by(|&a, &b| diff[b].total_cmp(&diff[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for p in peaks {
        if kept.iter().all(|&k| k.abs_diff(p) >= min_gap) {
            kept.push(p);
        }
    }
    // 0-based index t is 1-based frame t + 1
    let mut frames: Vec<usize> = kept.into_iter().map(|t| t + 1).filter(|&f| f < t_len).collect();
    frames.sort_unstable();
    BoundarySet::from_interior(t_len, &frames)
}
