//! Marginal log-likelihood with analytic gradient, and Adam training.

use std::f64::consts::PI;

use nalgebra::DVector;

use crate::error::{invalid, Result};
use crate::gp::hyper::{GpHyperparams, LOG_PARAM_BOUND};
use crate::gp::kernel::{matern52_profile, scaled_sq_dist};
use crate::gp::log::EvaluationLog;
use crate::gp::posterior::factor_with_jitter;
use crate::pool::EmbeddingPool;

const SQRT5: f64 = 2.236_067_977_499_79;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub lr: f64,
    pub iters: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { lr: 0.05, iters: 200 }
    }
}

/// Adds `scale * d k / d log(lengthscale_j)` for one ARD Matérn term into
/// `grad[offset + j]` and `scale * k` into `grad[offset + d]`.
#[inline]
fn accumulate_term(x: &[f64], y: &[f64], ls: &[f64], sf2: f64, scale: f64, grad: &mut [f64], offset: usize) {
    let r = scaled_sq_dist(x, y, ls).sqrt();
    let e = (-SQRT5 * r).exp();
    // d/dr of sf2 * profile(r) is -sf2 * 5/3 * r (1 + sqrt5 r) e; dr/dlog(l_j) = -(dx_j / l_j)^2 / r.
    let common = sf2 * (5.0 / 3.0) * (1.0 + SQRT5 * r) * e;
    for j in 0..ls.len() {
        let u = (x[j] - y[j]) / ls[j];
        grad[offset + j] += scale * common * u * u;
    }
    grad[offset + ls.len()] += scale * sf2 * matern52_profile(r);
}

/// Gaussian marginal log-likelihood of the standardized targets and its
/// gradient with respect to [`GpHyperparams::to_log_params`].
pub fn marginal_log_likelihood(pool: &EmbeddingPool, log: &EvaluationLog, hyper: &GpHyperparams) -> Result<(f64, Vec<f64>)> {
    if log.len() < 2 {
        return Err(invalid("marginal likelihood needs at least two observations"));
    }
    hyper.validate()?;
    let inputs: Vec<_> = log.inputs().collect();
    let n = inputs.len();
    let (ym, ys) = log.normalization();
    let y = DVector::from_iterator(n, log.values().map(|v| (v - ym) / ys));
    let (ch, _) = factor_with_jitter(pool, &inputs, hyper)?;
    let alpha = ch.solve(&y);
    let log_det: f64 = ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    let value = -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * PI).ln();

    // dMLL/dtheta = 1/2 tr((alpha alpha^T - K^{-1}) dK/dtheta)
    let kinv = ch.inverse();
    let d = hyper.dim();
    let mut grad = vec![0.0; hyper.num_params()];
    let level_offset = |l: usize| d + 1 + (l - 1) * (d + 2);
    for i in 0..n {
        for j in 0..=i {
            let w = alpha[i] * alpha[j] - kinv[(i, j)];
            let scale = if i == j { 0.5 * w } else { w };
            let (a, b) = (inputs[i], inputs[j]);
            let (x, z) = (pool.point(a.point_index), pool.point(b.point_index));
            accumulate_term(x, z, &hyper.lengthscales, hyper.signal_var, scale, &mut grad, 0);
            if a.level == b.level && a.level > 0 {
                let lp = &hyper.levels[a.level - 1];
                accumulate_term(x, z, &lp.lengthscales, lp.signal_var, scale, &mut grad, level_offset(a.level));
                if i == j {
                    grad[level_offset(a.level) + d + 1] += scale * lp.noise_var;
                }
            }
        }
    }
    Ok((value, grad))
}

/// Maximizes the marginal likelihood with Adam in log-space and returns the
/// best iterate seen (the initial point included).
pub fn train_hyperparameters(pool: &EmbeddingPool, log: &EvaluationLog, init: &GpHyperparams, opts: TrainOptions) -> Result<GpHyperparams> {
    let (first, mut grad) = marginal_log_likelihood(pool, log, init)?;
    let mut best = (first, init.clone());
    if opts.iters == 0 {
        return Ok(best.1);
    }
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let mut theta = init.to_log_params();
    let mut m = vec![0.0; theta.len()];
    let mut v = vec![0.0; theta.len()];
    for t in 1..=opts.iters {
        for k in 0..theta.len() {
            // ascent on the likelihood
            let g = -grad[k];
            m[k] = b1 * m[k] + (1.0 - b1) * g;
            v[k] = b2 * v[k] + (1.0 - b2) * g * g;
            let mh = m[k] / (1.0 - b1.powi(t as i32));
            let vh = v[k] / (1.0 - b2.powi(t as i32));
            theta[k] = (theta[k] - opts.lr * mh / (vh.sqrt() + eps)).clamp(-LOG_PARAM_BOUND, LOG_PARAM_BOUND);
        }
        let cand = init.with_log_params(&theta);
        match marginal_log_likelihood(pool, log, &cand) {
            Ok((val, g)) if val.is_finite() => {
                if val > best.0 {
                    best = (val, cand);
                }
                grad = g;
            }
            _ => break,
        }
    }
    Ok(best.1)
}
