//! Sparse hierarchical Bayesian decoding of implicit-association sessions.

pub mod baselines;
pub mod calibrate;
pub mod error;
pub mod eval;
pub mod infer;
pub mod leadfield;
pub mod model;
pub mod priors;
pub mod synth;
pub mod tensor_io;

pub use error::{Error, Result};
