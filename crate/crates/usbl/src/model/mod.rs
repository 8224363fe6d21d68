//! Session-level decoder: mirror-constrained logits, the full log posterior
//! with analytic gradients, prediction, and artifact persistence.

pub mod artifact;
pub mod config;
pub mod params;
pub mod posterior;
pub mod scoring;

pub use artifact::{load_fitted_model, save_fitted_model, FittedModel};
pub use config::{ModalityEntry, ModalityModelConfig, ModelConfig, ModelContext, PriorKind};
pub use params::{BlockLayout, ModalityBlock, ModalityLayout, ModelParameters, ParamLayout};
pub use posterior::{
    gradient_fd_relative_error, log_likelihood, log_posterior, log_posterior_with_grad,
    prepare_training_data, prepared_session_logits, sigmoid, signed_mean, softplus,
    DughOperators, PosteriorContext, PreparedData, PreparedSession,
};
pub use scoring::{assemble_scoring_model, ScoringModel};
