//! Reset-on-boundary encoder and backward-order decoder.
//!
//! Each segment is encoded from the initial (zero) state, so its embedding
//! depends on that segment's frames only. The decoder is likewise restarted
//! for every segment: its hidden state is a learned affine map of the
//! embedding, its first input is a zero frame, and it emits frames from the
//! segment end back to the segment start.

use std::ops::Range;

use rand::Rng;

use super::types::{BoundarySet, EmbeddingSequence};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::numeric::{axpy, Linear, LstmCell, LstmState, LstmStep, Matrix, Parameters};

/// What the decoder consumes after its first step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecoderFeed {
    /// The frame it reconstructed on the previous step.
    #[default]
    FreeRunning,
    /// The true frame that the previous step was asked to reconstruct.
    TeacherForced,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub encoder: LstmCell,
    pub decoder: LstmCell,
    pub decoder_init: Linear,
    pub readout: Linear,
}

struct DecodeTrace {
    steps: Vec<LstmStep>,
    /// Reconstructed frames in generation (backward) order.
    outputs: Vec<Vec<f64>>,
}

impl Autoencoder {
    pub fn new<R: Rng + ?Sized>(feature_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        Self {
            encoder: LstmCell::new(feature_dim, hidden_dim, rng),
            decoder: LstmCell::new(feature_dim, hidden_dim, rng),
            decoder_init: Linear::new(hidden_dim, hidden_dim, rng),
            readout: Linear::new(hidden_dim, feature_dim, rng),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.encoder.hidden_dim()
    }

    /// Embeds rows `range` of `frames` starting from the initial state.
    pub fn encode(&self, frames: &Matrix, range: Range<usize>) -> Vec<f64> {
        let mut state = LstmState::zeros(self.embedding_dim());
        for t in range {
            state = self.encoder.forward(&state, frames.row(t)).state;
        }
        state.h
    }

    fn encode_cached(&self, frames: &Matrix, range: Range<usize>) -> Vec<LstmStep> {
        let mut steps: Vec<LstmStep> = Vec::with_capacity(range.len());
        let zero = LstmState::zeros(self.embedding_dim());
        for t in range {
            let prev = steps.last().map_or(&zero, |s| &s.state);
            let s = self.encoder.forward(prev, frames.row(t));
            steps.push(s);
        }
        steps
    }

    fn check(&self, f: &FeatureMatrix, b: &BoundarySet) -> Result<()> {
        if f.dim() != self.feature_dim() {
            return Err(Error::shape("autoencoder features", self.feature_dim(), f.dim()));
        }
        if b.num_frames() != f.len() {
            return Err(Error::Input(format!(
                "boundaries cover {} frames but utterance `{}` has {}",
                b.num_frames(),
                f.id,
                f.len()
            )));
        }
        Ok(())
    }

    /// One embedding per segment of `b`.
    pub fn encode_segments(&self, f: &FeatureMatrix, b: &BoundarySet) -> Result<EmbeddingSequence> {
        self.check(f, b)?;
        let rows: Vec<Vec<f64>> = b.ranges().map(|r| self.encode(&f.frames, r)).collect();
        Ok(EmbeddingSequence {
            vectors: Matrix::from_rows(&rows)?,
        })
    }

    fn decode_cached(&self, e: &[f64], len: usize, teacher: Option<(&Matrix, usize)>) -> DecodeTrace {
        let h0 = self.decoder_init.forward(e);
        let d = self.feature_dim();
        let mut steps: Vec<LstmStep> = Vec::with_capacity(len);
        let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(len);
        let init = LstmState {
            h: h0.clone(),
            c: vec![0.0; h0.len()],
        };
        let zero = vec![0.0; d];
        for k in 0..len {
            let input: &[f64] = match (k, teacher) {
                (0, _) => &zero,
                (_, None) => &outputs[k - 1],
                // the previous step reconstructed row `last + 1 - k`
                (_, Some((frames, last))) => frames.row(last + 1 - k),
            };
            let prev = steps.last().map_or(&init, |s| &s.state);
            let s = self.decoder.forward(prev, input);
            outputs.push(self.readout.forward(&s.state.h));
            steps.push(s);
        }
        DecodeTrace { steps, outputs }
    }

    /// Reconstructs `len` frames from one embedding, returned in forward
    /// frame order. Teacher forcing needs the true frames of the segment.
    pub fn decode(&self, e: &[f64], len: usize, teacher: Option<&Matrix>) -> Vec<Vec<f64>> {
        let mut out = self.decode_cached(e, len, teacher.map(|m| (m, len - 1))).outputs;
        out.reverse();
        out
    }

    /// Reconstructs a whole utterance segment by segment.
    pub fn decode_segments(
        &self,
        y: &EmbeddingSequence,
        b: &BoundarySet,
        feed: DecoderFeed,
        original: Option<&FeatureMatrix>,
    ) -> Result<FeatureMatrix> {
        if y.len() != b.num_segments() {
            return Err(Error::shape("decode_segments embeddings", b.num_segments(), y.len()));
        }
        if y.dim() != self.embedding_dim() {
            return Err(Error::shape("decode_segments embedding dim", self.embedding_dim(), y.dim()));
        }
        let teacher = match (feed, original) {
            (DecoderFeed::FreeRunning, _) => None,
            (DecoderFeed::TeacherForced, Some(f)) => {
                self.check(f, b)?;
                Some(&f.frames)
            }
            (DecoderFeed::TeacherForced, None) => {
                return Err(Error::Input("teacher forcing needs the original frames".into()))
            }
        };
        let mut out = Matrix::zeros(b.num_frames(), self.feature_dim());
        for (n, r) in b.ranges().enumerate() {
            let trace = self.decode_cached(y.get(n), r.len(), teacher.map(|m| (m, r.end - 1)));
            for (k, frame) in trace.outputs.iter().enumerate() {
                out.row_mut(r.end - 1 - k).copy_from_slice(frame);
            }
        }
        FeatureMatrix::new(original.map_or_else(String::new, |f| f.id.clone()), out)
    }

    /// Encodes then decodes every segment of `f`.
    pub fn reconstruct(&self, f: &FeatureMatrix, b: &BoundarySet, feed: DecoderFeed) -> Result<FeatureMatrix> {
        let y = self.encode_segments(f, b)?;
        self.decode_segments(&y, b, feed, Some(f))
    }

    /// Reconstruction error of one segment, summed over its frames.
    pub fn segment_error(&self, frames: &Matrix, range: Range<usize>, feed: DecoderFeed) -> f64 {
        let e = self.encode(frames, range.clone());
        let teacher = (feed == DecoderFeed::TeacherForced).then_some((frames, range.end - 1));
        let trace = self.decode_cached(&e, range.len(), teacher);
        let d = self.feature_dim() as f64;
        trace
            .outputs
            .iter()
            .enumerate()
            .map(|(k, xh)| sq_dist(xh, frames.row(range.end - 1 - k)) / d)
            .sum()
    }

    /// Per-utterance reconstruction error `Σ_t (1/d)‖x̂_t − x_t‖²`.
    pub fn utterance_error(&self, f: &FeatureMatrix, b: &BoundarySet, feed: DecoderFeed) -> Result<f64> {
        self.check(f, b)?;
        Ok(b.ranges().map(|r| self.segment_error(&f.frames, r, feed)).sum())
    }

    /// Backward through one decoded segment. `d_outputs` is indexed in
    /// generation order. Returns the gradient on the embedding.
    fn decode_backward(
        &self,
        e: &[f64],
        trace: &DecodeTrace,
        d_outputs: &[Vec<f64>],
        feed: DecoderFeed,
        grads: &mut Autoencoder,
    ) -> Vec<f64> {
        let hd = self.embedding_dim();
        let d = self.feature_dim();
        let free = feed == DecoderFeed::FreeRunning;
        let mut dh_carry = vec![0.0; hd];
        let mut dc_carry = vec![0.0; hd];
        let mut d_next_input = vec![0.0; d];
        for k in (0..trace.steps.len()).rev() {
            let mut dy = d_outputs[k].clone();
            if free {
                axpy(1.0, &d_next_input, &mut dy);
            }
            let step = &trace.steps[k];
            let mut dh = dh_carry;
            self.readout.backward(&step.state.h, &dy, &mut grads.readout, Some(&mut dh));
            let mut dx = vec![0.0; d];
            let want_dx = free && k > 0;
            let (dhp, dcp) = self.decoder.backward(
                step,
                &dh,
                &dc_carry,
                &mut grads.decoder,
                want_dx.then_some(dx.as_mut_slice()),
            );
            dh_carry = dhp;
            dc_carry = dcp;
            d_next_input = dx;
        }
        let mut de = vec![0.0; e.len()];
        self.decoder_init
            .backward(e, &dh_carry, &mut grads.decoder_init, Some(&mut de));
        de
    }

    fn encode_backward(&self, steps: &[LstmStep], de: &[f64], grads: &mut Autoencoder) {
        let hd = self.embedding_dim();
        let mut dh = de.to_vec();
        let mut dc = vec![0.0; hd];
        for step in steps.iter().rev() {
            let (dhp, dcp) = self.encoder.backward(step, &dh, &dc, &mut grads.encoder, None);
            dh = dhp;
            dc = dcp;
        }
    }

    /// Loss of one segment with gradients accumulated into `grads`.
    pub fn segment_loss_grad(
        &self,
        frames: &Matrix,
        range: Range<usize>,
        feed: DecoderFeed,
        grads: &mut Autoencoder,
    ) -> f64 {
        let d = self.feature_dim() as f64;
        let enc = self.encode_cached(frames, range.clone());
        let e = enc.last().expect("non-empty segment").state.h.clone();
        let teacher = (feed == DecoderFeed::TeacherForced).then_some((frames, range.end - 1));
        let trace = self.decode_cached(&e, range.len(), teacher);
        let mut loss = 0.0;
        let d_outputs: Vec<Vec<f64>> = trace
            .outputs
            .iter()
            .enumerate()
            .map(|(k, xh)| {
                let x = frames.row(range.end - 1 - k);
                loss += sq_dist(xh, x) / d;
                xh.iter().zip(x).map(|(a, b)| 2.0 * (a - b) / d).collect()
            })
            .collect();
        let de = self.decode_backward(&e, &trace, &d_outputs, feed, grads);
        self.encode_backward(&enc, &de, grads);
        loss
    }

    /// Utterance loss and gradient accumulation into `grads`.
    pub fn loss_and_grad(
        &self,
        f: &FeatureMatrix,
        b: &BoundarySet,
        feed: DecoderFeed,
        grads: &mut Autoencoder,
    ) -> Result<f64> {
        self.check(f, b)?;
        Ok(b
            .ranges()
            .map(|r| self.segment_loss_grad(&f.frames, r, feed, grads))
            .sum())
    }

    /// Gradient of the reconstruction error of the segments selected by
    /// `counted` with respect to every embedding, holding the embeddings
    /// fixed (decoder only). Row `m` is `∂L/∂e_m`.
    pub fn embedding_gradients(
        &self,
        y: &EmbeddingSequence,
        b: &BoundarySet,
        original: &FeatureMatrix,
        feed: DecoderFeed,
        counted: &[bool],
    ) -> Result<Matrix> {
        self.check(original, b)?;
        if y.len() != b.num_segments() || counted.len() != y.len() {
            return Err(Error::shape("embedding_gradients", b.num_segments(), y.len()));
        }
        let d = self.feature_dim() as f64;
        let mut scratch = self.zeros_like();
        let mut out = Matrix::zeros(y.len(), y.dim());
        for (n, r) in b.ranges().enumerate() {
            let teacher = (feed == DecoderFeed::TeacherForced).then_some((&original.frames, r.end - 1));
            let trace = self.decode_cached(y.get(n), r.len(), teacher);
            let d_outputs: Vec<Vec<f64>> = trace
                .outputs
                .iter()
                .enumerate()
                .map(|(k, xh)| {
                    let x = original.frames.row(r.end - 1 - k);
                    let w = if counted[n] { 2.0 / d } else { 0.0 };
                    xh.iter().zip(x).map(|(a, b)| w * (a - b)).collect()
                })
                .collect();
            let de = self.decode_backward(y.get(n), &trace, &d_outputs, feed, &mut scratch);
            out.row_mut(n).copy_from_slice(&de);
        }
        Ok(out)
    }
}

impl Parameters for Autoencoder {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        use crate::numeric::Parameters as P;
        let mut v = Vec::new();
        for (prefix, t) in [
            ("encoder", P::tensors(&self.encoder)),
            ("decoder", P::tensors(&self.decoder)),
            ("decoder_init", P::tensors(&self.decoder_init)),
            ("readout", P::tensors(&self.readout)),
        ] {
            v.extend(t.into_iter().map(|(n, m)| (format!("{prefix}.{n}"), m)));
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = self.encoder.tensors_mut();
        v.extend(self.decoder.tensors_mut());
        v.extend(self.decoder_init.tensors_mut());
        v.extend(self.readout.tensors_mut());
        v
    }
}

/// `Σ_t (1/d)‖x̂_t − x_t‖²` over all frames.
pub fn reconstruction_loss(original: &FeatureMatrix, reconstructed: &FeatureMatrix) -> Result<f64> {
    if original.frames.shape() != reconstructed.frames.shape() {
        return Err(Error::shape(
            "reconstruction_loss",
            format!("{:?}", original.frames.shape()),
            format!("{:?}", reconstructed.frames.shape()),
        ));
    }
    let d = original.dim() as f64;
    Ok(original
        .frames
        .iter_rows()
        .zip(reconstructed.frames.iter_rows())
        .map(|(a, b)| sq_dist(a, b) / d)
        .sum())
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
