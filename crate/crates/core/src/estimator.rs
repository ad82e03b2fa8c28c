//! Failure probabilities under the posterior, the exact variance of the
//! plug-in rate estimate, and its point-variance upper bound.

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::gp::PosteriorState;
use crate::normal::{bvn_lower, std_normal_cdf};
use crate::pool::AugmentedInput;

/// Posterior standard deviations below this are treated as zero.
pub const SIGMA_FLOOR: f64 = 1e-12;

/// Standardized margin `(gamma - mu) / sigma`, or `None` for a deterministic
/// point.
#[inline]
pub fn standardized_margin(gamma: f64, mean: f64, var: f64) -> Option<f64> {
    let sd = var.max(0.0).sqrt();
    (sd >= SIGMA_FLOOR).then(|| (gamma - mean) / sd)
}

/// Failure probability for a margin; deterministic points fail iff `mu <= gamma`.
#[inline]
fn prob_from_margin(margin: Option<f64>, gamma: f64, mean: f64) -> f64 {
    match margin {
        Some(s) => std_normal_cdf(s),
        None => f64::from(u8::from(mean <= gamma)),
    }
}

/// Per-point failure probability and Bernoulli variance at level 0.
#[derive(Debug, Clone, PartialEq)]
pub struct FailureField {
    pub p: Vec<f64>,
    pub h: Vec<f64>,
}

impl FailureField {
    pub fn from_probs(p: Vec<f64>) -> Result<Self> {
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid("failure probabilities must lie in [0, 1]"));
        }
        let h = p.iter().map(|v| v * (1.0 - v)).collect();
        Ok(Self { p, h })
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

/// Failure field at level 0 of the given points.
pub fn failure_prob(state: &PosteriorState, points: &[usize]) -> FailureField {
    let queries: Vec<AugmentedInput> = points.iter().map(|&i| AugmentedInput::new(i, 0)).collect();
    let g = state.gamma_normalized();
    let mut p = Vec::with_capacity(points.len());
    // chunked so the whitened block stays small for large pools
    for chunk in queries.chunks(4096) {
        let (m, v) = state.normalized_mean_var(chunk);
        p.extend(m.iter().zip(&v).map(|(&mu, &var)| prob_from_margin(standardized_margin(g, mu, var), g, mu)));
    }
    FailureField::from_probs(p).expect("normal cdf lies in [0, 1]")
}

/// Failure field over every point of the state's pool.
pub fn failure_field_all(state: &PosteriorState) -> FailureField {
    let idx: Vec<usize> = (0..state.pool().len()).collect();
    failure_prob(state, &idx)
}

/// Exact `Var(p_hat)` of the indicator average for a Gaussian vector with the
/// given means and covariance, failing where a component is `<= gamma`.
pub fn variance_from_moments(means: &[f64], cov: &DMatrix<f64>, gamma: f64) -> f64 {
    let n = means.len();
    assert_eq!((cov.nrows(), cov.ncols()), (n, n), "covariance shape mismatch");
    let margins: Vec<Option<f64>> = (0..n).map(|i| standardized_margin(gamma, means[i], cov[(i, i)])).collect();
    let probs: Vec<f64> = (0..n).map(|i| prob_from_margin(margins[i], gamma, means[i])).collect();
    let mut total = 0.0;
    for i in 0..n {
        total += probs[i] * (1.0 - probs[i]);
        let Some(si) = margins[i] else { continue };
        for j in 0..i {
            let Some(sj) = margins[j] else { continue };
            // one square root keeps r exactly 1 for identical rows
            let r = (cov[(i, j)] / (cov[(i, i)] * cov[(j, j)]).sqrt()).clamp(-1.0, 1.0);
            total += 2.0 * (bvn_lower(si, sj, r) - probs[i] * probs[j]);
        }
    }
    (total / (n * n) as f64).max(0.0)
}

/// Exact posterior variance of the rate estimate `(1/N) sum g(x_i)` over the
/// given level-0 points. Quadratic in the number of points.
pub fn estimator_variance_exact(state: &PosteriorState, points: &[usize]) -> Result<f64> {
    if points.is_empty() {
        return Err(invalid("at least one point is required"));
    }
    let q: Vec<AugmentedInput> = points.iter().map(|&i| AugmentedInput::new(i, 0)).collect();
    let (means, _) = state.normalized_mean_var(&q);
    let cov = state.normalized_cross_cov(&q, &q);
    Ok(variance_from_moments(&means, &cov, state.gamma_normalized()))
}

/// Average point variance, an upper bound on the exact variance.
pub fn variance_upper_bound(field: &FailureField) -> Result<f64> {
    if field.is_empty() {
        return Err(invalid("failure field is empty"));
    }
    Ok(field.h.iter().sum::<f64>() / field.len() as f64)
}
