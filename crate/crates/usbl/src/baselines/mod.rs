//! Reference decoders: response-time scoring and per-trial linear models.

pub mod decode;
pub mod dscore;
pub mod recode;
pub mod ridge;
pub mod shrinkage;
pub mod slda;
pub mod windows;

pub use decode::{run_baseline, BaselineMethod, DecodeMode, LOGIT_CLAMP};
pub use dscore::{dscore, dscore_classify, DScoreResult, RT_CLAMP_MS};
pub use recode::{recode_labels, unrecode_predictions};
pub use ridge::{fit_ridge_lr, predict_ridge_lr, RidgeLRModel, RIDGE_GRID};
pub use shrinkage::{ledoit_wolf, ledoit_wolf_with};
pub use slda::{fit_slda, fit_slda_with_shrinkage, predict_slda, SLDAModel};
pub use windows::{window_features, WindowKind, WindowSet};
