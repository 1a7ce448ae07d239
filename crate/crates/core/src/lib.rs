pub mod checks;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod features;
pub mod gas;
pub mod io;
pub mod matching;
pub mod numeric;
pub mod ssae;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
