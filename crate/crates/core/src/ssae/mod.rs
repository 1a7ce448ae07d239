//! The segmental sequence-to-sequence autoencoder: a segmentation gate
//! deciding word boundaries, an encoder that restarts at every boundary to
//! emit one embedding per segment, and a decoder that rebuilds each segment
//! backwards from its embedding.

mod autoencoder;
mod gate;
mod types;

pub use autoencoder::{reconstruction_loss, Autoencoder, DecoderFeed};
pub use gate::{GateTrace, Rollout, SegmentationGate};
pub use types::{Action, ActionSequence, BoundarySet, DecisionMode, EmbeddingSequence, PolicyOutput};

use rand::Rng;

use crate::error::Result;
use crate::features::FeatureMatrix;
use crate::gas::GasSequence;
use crate::numeric::{Matrix, Parameters};

/// Architecture sizes. Defaults follow the published setup: 100-unit
/// encoder/decoder LSTMs and a 2×256 LSTM gate over 39-dim MFCCs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub gas_dim: usize,
    pub hidden_dim: usize,
    pub gate_hidden: usize,
    pub gate_layers: usize,
    pub decoder_feed: DecoderFeed,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: 39,
            gas_dim: 100,
            hidden_dim: 100,
            gate_hidden: 256,
            gate_layers: 2,
            decoder_feed: DecoderFeed::FreeRunning,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsaeParams {
    pub config: ModelConfig,
    pub autoencoder: Autoencoder,
    pub gate: SegmentationGate,
}

impl SsaeParams {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Self {
        let autoencoder = Autoencoder::new(config.feature_dim, config.hidden_dim, rng);
        let gate = SegmentationGate::new(
            config.feature_dim,
            config.gas_dim,
            config.gate_hidden,
            config.gate_layers,
            rng,
        );
        Self {
            config,
            autoencoder,
            gate,
        }
    }

    /// Greedy segmentation, as used at test time.
    pub fn segment(&self, f: &FeatureMatrix, g: &GasSequence) -> Result<BoundarySet> {
        let r = self.gate.rollout(f, g, None)?;
        BoundarySet::from_actions(&r.actions)
    }

    /// Greedy segmentation followed by per-segment embeddings.
    pub fn embed(&self, f: &FeatureMatrix, g: &GasSequence) -> Result<(BoundarySet, EmbeddingSequence)> {
        let b = self.segment(f, g)?;
        let y = self.autoencoder.encode_segments(f, &b)?;
        Ok((b, y))
    }
}

impl Parameters for SsaeParams {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut v: Vec<(String, &Matrix)> = self
            .autoencoder
            .tensors()
            .into_iter()
            .map(|(n, m)| (format!("ae.{n}"), m))
            .collect();
        v.extend(self.gate.tensors().into_iter().map(|(n, m)| (format!("gate.{n}"), m)));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = self.autoencoder.tensors_mut();
        v.extend(self.gate.tensors_mut());
        v
    }
}

#[cfg(test)]
mod tests;
