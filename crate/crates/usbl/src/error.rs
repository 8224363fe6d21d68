//! Crate-wide error type.
//!
//! One enum covers all modules so callers (and the CLI exit-code mapping) can
//! match on failure class without unwrapping nested error types.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Malformed or inconsistent input data / configuration.
    Data,
    /// Numerical failure during fitting or evaluation.
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    // ---- tensor files ----
    #[error("bad magic {found:?}, expected \"USBL\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported tensor format version {0}")]
    UnsupportedVersion(u32),
    #[error("dtype code {found} unsupported, expected {expected} (little-endian f32)")]
    DtypeMismatch { found: u8, expected: u8 },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },
    #[error("invalid tensor dims {dims:?}: {reason}")]
    InvalidDims { dims: Vec<u64>, reason: &'static str },
    #[error("trailing bytes after tensor payload in {path}")]
    TrailingBytes { path: PathBuf },

    // ---- dataset / manifest ----
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("missing file {path}")]
    MissingFile { path: PathBuf },
    #[error("shape mismatch for modality {modality}: expected {expected}, found {found}")]
    ShapeMismatch {
        modality: String,
        expected: String,
        found: String,
    },
    #[error("session {participant}: label missing")]
    LabelMissing { participant: String },
    #[error("session {participant}: label {value} is not 0 or 1")]
    InvalidLabel { participant: String, value: i64 },
    #[error("session {participant}: condition sequence length {found} does not match trial count {expected}")]
    ConditionLengthMismatch {
        participant: String,
        expected: usize,
        found: usize,
    },
    #[error("unknown condition tag {tag:?} (expected \"C\" or \"I\")")]
    UnknownConditionTag { tag: String },
    #[error("modality {0} not present")]
    UnknownModality(String),
    #[error("session {participant}: modality {modality} has {found} trials, expected {expected}")]
    TrialCountMismatch {
        participant: String,
        modality: String,
        expected: usize,
        found: usize,
    },

    // ---- standardization ----
    #[error("modality {modality} channel {channel} has zero pooled variance")]
    ZeroVariance { modality: String, channel: usize },

    // ---- lead field / covariance ----
    #[error("lead-field row {row} is identically zero")]
    ZeroRow { row: usize },
    #[error("degenerate lead-field geometry: {0}")]
    DegenerateGeometry(&'static str),
    #[error("covariance matrix is not positive definite ({context})")]
    NotPositiveDefinite { context: &'static str },

    // ---- model / inference ----
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("parameter out of domain: {0}")]
    DomainError(String),
    #[error("non-finite value in {context}{}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFinite {
        context: &'static str,
        step: Option<usize>,
    },
    #[error("degenerate session evidence: all session logits are zero")]
    DegenerateEvidence,

    // ---- baselines / evaluation ----
    #[error("session has trials of only one condition")]
    OneConditionOnly,
    #[error("degenerate response times: pooled standard deviation is zero")]
    DegenerateRt,
    #[error("window [{start_s}, {end_s}) s falls outside the segment time span")]
    WindowOutOfRange { start_s: f64, end_s: f64 },
    #[error("stratification failure: {0}")]
    StratificationFailure(String),
    #[error("invalid evaluation setup: {0}")]
    InvalidEval(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Classifies the error for process exit codes.
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::NonFinite { .. }
            | Error::NotPositiveDefinite { .. }
            | Error::DegenerateEvidence
            | Error::DegenerateRt
            | Error::DomainError(_) => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }
}
