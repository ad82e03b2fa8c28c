//! Gaussian-process surrogate over augmented (point, fidelity) inputs.

pub mod hyper;
pub mod kernel;
pub mod log;
pub mod posterior;
pub mod train;

pub use hyper::{GpHyperparams, LevelParams};
pub use kernel::{latent_cov, matern25_kernel, multifidelity_kernel};
pub use log::{EvalRecord, EvaluationLog};
pub use posterior::{fit_posterior, PosteriorState};
pub use train::{marginal_log_likelihood, train_hyperparameters, TrainOptions};
