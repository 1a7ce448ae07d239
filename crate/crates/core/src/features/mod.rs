//! Acoustic front end: MFCC + Δ + ΔΔ extraction, utterance-wise CMVN and
//! WAV input.

mod cmvn;
mod mfcc;
mod wav;

pub use cmvn::apply_cmvn;
pub use mfcc::{compute_mfcc, num_frames, MfccConfig};
pub use wav::{read_wav, write_wav};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Per-utterance features, `T` frames by `d` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub id: String,
    pub frames: Matrix,
}

impl FeatureMatrix {
    pub fn new(id: impl Into<String>, frames: Matrix) -> Result<Self> {
        if frames.rows() == 0 {
            return Err(Error::Input("feature matrix needs at least one frame".into()));
        }
        if !frames.is_finite() {
            return Err(Error::Domain("feature matrix has non-finite values".into()));
        }
        Ok(Self {
            id: id.into(),
            frames,
        })
    }

    /// Number of frames `T`.
    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    /// Feature dimensionality `d`.
    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.frames.row(t)
    }
}
