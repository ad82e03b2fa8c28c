//! Searching a finite pool of scenarios for rare failures with a
//! multifidelity Gaussian process.
//!
//! A surrogate over `(point, fidelity level)` pairs gives each point a
//! posterior probability of failing. Batches of simulations are chosen
//! greedily to shrink the expected variance of the failure-rate estimate
//! per unit cost, one queue per cluster of the pool. The final probabilities
//! become importance-sampling weights for estimating the rate.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod acquisition;
pub mod baselines;
pub mod clustering;
pub mod driver;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod gp;
pub mod normal;
pub mod oracle;
pub mod pool;
pub mod seeds;
pub mod synthetic;

pub use error::{Error, Result};
pub use pool::{AugmentedInput, EmbeddingPool, FidelityConfig};
