//! Synthetic cohorts, lead-field generation, and design-effect estimation.

pub mod cohort;
pub mod deff;
pub mod field;

pub use cohort::{
    generate_cohort, load_ground_truth, save_ground_truth, write_cohort, GroundTruth,
    ModalitySource, SynthConfig, SynthModality, GROUND_TRUTH_FILE, LEADFIELD_FILE, RT_BASE_MS,
    RT_SCALE_MS,
};
pub use deff::{kish_deff, DeffEstimate};
pub use field::generate_leadfield;
