//! Optimization and posterior approximation: Adam MAP fitting, diagonal
//! Laplace curvature, confidence-scale sampling, and the stage-1 pipeline.

pub mod adam;
pub mod init;
pub mod laplace;
pub mod omega;
pub mod pipeline;

pub use adam::{clip_global_norm, fit_map, lr_at, FitResult, OptimizerSchedule};
pub use init::{derive_seed, init_parameters};
pub use laplace::{laplace_diag, LaplaceDiag, CURVATURE_FD_STEP_REL, CURVATURE_FLOOR};
pub use omega::{
    omega_log_target, omega_quadrature_summary, posterior_median, sample_omega, MCMCConfig,
    OmegaPosterior,
};
pub use pipeline::{fit_stage1, FitOptions, Stage1Fit};
