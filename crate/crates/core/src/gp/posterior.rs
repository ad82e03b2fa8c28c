//! Exact GP posterior over augmented inputs.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{invalid, Error, Result};
use crate::gp::hyper::GpHyperparams;
use crate::gp::kernel::latent_cov;
use crate::gp::log::EvaluationLog;
use crate::pool::{AugmentedInput, EmbeddingPool};

/// Upper limit of the jitter escalation, relative to the base signal variance.
const MAX_JITTER_REL: f64 = 1e-2;

/// Observation covariance of `inputs` with the given diagonal jitter.
pub(crate) fn observation_matrix(pool: &EmbeddingPool, inputs: &[AugmentedInput], hyper: &GpHyperparams, jitter: f64) -> DMatrix<f64> {
    let n = inputs.len();
    let mut k = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let v = latent_cov(pool, inputs[i], inputs[j], hyper);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(j, j)] += hyper.noise(inputs[j].level) + jitter;
    }
    k
}

/// Cholesky of the observation matrix, multiplying the jitter by 10 on each
/// failure. Returns the factor and the jitter that succeeded.
pub(crate) fn factor_with_jitter(
    pool: &EmbeddingPool,
    inputs: &[AugmentedInput],
    hyper: &GpHyperparams,
) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let limit = MAX_JITTER_REL * hyper.signal_var;
    let mut jitter = hyper.jitter;
    loop {
        let k = observation_matrix(pool, inputs, hyper, jitter);
        if let Some(ch) = Cholesky::new(k) {
            if ch.l_dirty().diagonal().iter().all(|d| d.is_finite() && *d > 0.0) {
                return Ok((ch, jitter));
            }
        }
        if jitter >= limit {
            return Err(Error::NumericalFailure(format!(
                "kernel matrix of {} inputs is not positive definite with jitter {jitter:e}",
                inputs.len()
            )));
        }
        jitter = (jitter * 10.0).min(limit);
    }
}

/// Immutable posterior snapshot. Internally everything is expressed in
/// standardized target units; public accessors convert back.
#[derive(Debug, Clone)]
pub struct PosteriorState {
    pool: Arc<EmbeddingPool>,
    hyper: GpHyperparams,
    inputs: Vec<AugmentedInput>,
    targets: DVector<f64>,
    chol: Option<Cholesky<f64, Dyn>>,
    weights: DVector<f64>,
    whitened_targets: DVector<f64>,
    y_mean: f64,
    y_std: f64,
    gamma: f64,
    jitter: f64,
}

/// Fits the posterior to the log. An empty log yields the prior.
pub fn fit_posterior(pool: &Arc<EmbeddingPool>, log: &EvaluationLog, hyper: &GpHyperparams, gamma: f64) -> Result<PosteriorState> {
    hyper.validate()?;
    if hyper.dim() != pool.dim() {
        return Err(invalid(format!("hyperparameters have {} lengthscales for a {}-dimensional pool", hyper.dim(), pool.dim())));
    }
    if !gamma.is_finite() {
        return Err(invalid("threshold must be finite"));
    }
    let inputs: Vec<AugmentedInput> = log.inputs().collect();
    for y in &inputs {
        if y.point_index >= pool.len() || y.level >= hyper.num_levels() {
            return Err(invalid(format!("logged input {y} out of bounds")));
        }
    }
    let (y_mean, y_std) = log.normalization();
    let targets = DVector::from_iterator(inputs.len(), log.values().map(|v| (v - y_mean) / y_std));
    let (chol, weights, whitened_targets, jitter) = if inputs.is_empty() {
        (None, DVector::zeros(0), DVector::zeros(0), hyper.jitter)
    } else {
        let (ch, jitter) = factor_with_jitter(pool, &inputs, hyper)?;
        let w = ch.solve(&targets);
        let z = ch.l_dirty().solve_lower_triangular(&targets).expect("factor diagonal is positive");
        (Some(ch), w, z, jitter)
    };
    Ok(PosteriorState {
        pool: Arc::clone(pool),
        hyper: hyper.clone(),
        inputs,
        targets,
        chol,
        weights,
        whitened_targets,
        y_mean,
        y_std,
        gamma,
        jitter,
    })
}

impl PosteriorState {
    pub fn pool(&self) -> &Arc<EmbeddingPool> {
        &self.pool
    }

    pub fn hyper(&self) -> &GpHyperparams {
        &self.hyper
    }

    pub fn inputs(&self) -> &[AugmentedInput] {
        &self.inputs
    }

    pub fn num_observations(&self) -> usize {
        self.inputs.len()
    }

    /// Threshold in original units.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Threshold in standardized units.
    pub fn gamma_normalized(&self) -> f64 {
        (self.gamma - self.y_mean) / self.y_std
    }

    /// `(mean, std)` used to standardize targets.
    pub fn normalization(&self) -> (f64, f64) {
        (self.y_mean, self.y_std)
    }

    /// Jitter that made the factorization succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn targets_normalized(&self) -> &DVector<f64> {
        &self.targets
    }

    /// Lower Cholesky factor of the observation matrix (empty for the prior).
    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        self.chol.as_ref().map(|c| c.l()).unwrap_or_else(|| DMatrix::zeros(0, 0))
    }

    /// Weight vector `K^{-1} y` in standardized units.
    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    /// Prior latent covariance in standardized units.
    #[inline]
    pub fn prior_cov(&self, a: AugmentedInput, b: AugmentedInput) -> f64 {
        latent_cov(&self.pool, a, b, &self.hyper)
    }

    /// Columns `L^{-1} k(X, q)` for each query; `n x |queries|`.
    pub fn whiten(&self, queries: &[AugmentedInput]) -> DMatrix<f64> {
        let n = self.inputs.len();
        let mut kq = DMatrix::zeros(n, queries.len());
        if n == 0 {
            return kq;
        }
        for (c, q) in queries.iter().enumerate() {
            for (r, x) in self.inputs.iter().enumerate() {
                kq[(r, c)] = latent_cov(&self.pool, *x, *q, &self.hyper);
            }
        }
        let l = self.chol.as_ref().expect("fitted state has a factor").l_dirty();
        l.solve_lower_triangular_mut(&mut kq);
        kq
    }

    /// `L^{-1} y`, so that the posterior mean at `q` is `whiten(q) . this`.
    pub fn whitened_targets(&self) -> &DVector<f64> {
        &self.whitened_targets
    }

    /// Posterior means and latent variances in standardized units, variances
    /// clamped at zero.
    pub fn normalized_mean_var(&self, queries: &[AugmentedInput]) -> (Vec<f64>, Vec<f64>) {
        let w = self.whiten(queries);
        self.mean_var_from_whitened(queries, &w)
    }

    /// Same as [`PosteriorState::normalized_mean_var`] for queries whose
    /// whitened columns are already known.
    pub fn mean_var_from_whitened(&self, queries: &[AugmentedInput], w: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
        queries
            .iter()
            .enumerate()
            .map(|(c, q)| {
                let col = w.column(c);
                (col.dot(&self.whitened_targets), (self.prior_cov(*q, *q) - col.dot(&col)).max(0.0))
            })
            .unzip()
    }

    /// Posterior means and variances in original target units.
    pub fn posterior_mean_var(&self, queries: &[AugmentedInput]) -> (Vec<f64>, Vec<f64>) {
        let (mut m, mut v) = self.normalized_mean_var(queries);
        let s2 = self.y_std * self.y_std;
        m.iter_mut().for_each(|x| *x = *x * self.y_std + self.y_mean);
        v.iter_mut().for_each(|x| *x *= s2);
        (m, v)
    }

    /// Posterior latent covariance in standardized units.
    pub fn normalized_cross_cov(&self, a: &[AugmentedInput], b: &[AugmentedInput]) -> DMatrix<f64> {
        let wa = self.whiten(a);
        let wb = self.whiten(b);
        let mut out = DMatrix::from_fn(a.len(), b.len(), |i, j| self.prior_cov(a[i], b[j]));
        if !self.inputs.is_empty() {
            out -= wa.transpose() * wb;
        }
        for i in 0..a.len() {
            for j in 0..b.len() {
                if a[i] == b[j] && out[(i, j)] < 0.0 {
                    out[(i, j)] = 0.0;
                }
            }
        }
        out
    }

    /// Posterior latent covariance in original (squared) units.
    pub fn posterior_cross_cov(&self, a: &[AugmentedInput], b: &[AugmentedInput]) -> DMatrix<f64> {
        self.normalized_cross_cov(a, b) * (self.y_std * self.y_std)
    }
}
