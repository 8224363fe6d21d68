//! Dataset model, binary tensor files, manifests, and channel standardization.

pub mod dataset;
pub mod format;
pub mod standardize;

pub use dataset::{load_dataset, write_dataset, Condition, Dataset, ModalityShape, Session, TrialSegment};
pub use format::{read_tensor, read_tensor_from, write_tensor, write_tensor_to};
pub use standardize::{apply_standardizer, fit_standardizer, Standardizer};
