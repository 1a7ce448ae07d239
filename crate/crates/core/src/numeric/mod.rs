//! Small differentiable sequence-model kernel: recurrent cells, affine
//! layers, softmax, Adam and a central-difference gradient checker.

mod activation;
mod adam;
mod gradcheck;
mod gru;
mod linear;
pub mod lstm;
mod matrix;
mod params;

pub use activation::{sigmoid, softmax};
pub(crate) use activation::softmax2;
pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, GradCheckReport, REL_ERROR_FLOOR};
pub use gru::{GruCell, GruStep};
pub use linear::Linear;
pub use lstm::{LstmCell, LstmStack, LstmState, LstmStep, StackStep};
pub use matrix::{axpy, dot, norm, Matrix};
pub use params::{accumulate, clip_global_norm, global_norm, scale_all, uniform_matrix, Parameters};
