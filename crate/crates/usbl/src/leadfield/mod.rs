//! Lead-field handling and the structured sensor covariances built from it.

pub mod covariance;
pub mod factor_analysis;
pub mod field;

pub use covariance::{
    build_spatial_covariance, cholesky_with_jitter, estimate_data_covariance, haufe_weights,
    matrix_normal_grad_terms, matrix_normal_logdensity, matrix_to_rows, population_covariance,
    rows_to_matrix, shrink_covariance, CovarianceEstimate, MatrixNormalTerms, RegionProjections,
};
pub use factor_analysis::{estimate_noise_covariance, FactorAnalysisResult};
pub use field::{
    load_leadfield, mean_neighbor_distance, normalize_rows, preprocess_leadfield,
    smoothing_weights, write_leadfield, LeadField, DEFAULT_KERNEL_MULTIPLIER,
};
