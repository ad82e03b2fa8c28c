//! Shared fixtures and independent reference implementations for the
//! integration suites.
#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{Cholesky, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rare_sampler::acquisition::{acquisition_j, PendingSet};
use rare_sampler::estimator::variance_from_moments;
use rare_sampler::gp::{fit_posterior, EvaluationLog, GpHyperparams, LevelParams, PosteriorState};
use rare_sampler::{AugmentedInput, EmbeddingPool, FidelityConfig};

pub struct Problem {
    pub pool: Arc<EmbeddingPool>,
    pub log: EvaluationLog,
    pub hyper: GpHyperparams,
    pub fid: FidelityConfig,
    pub gamma: f64,
}

impl Problem {
    pub fn state(&self) -> PosteriorState {
        fit_posterior(&self.pool, &self.log, &self.hyper, self.gamma).expect("fit")
    }
}

/// A random pool in `[0, 3]^d`, random hyperparameters and `n_obs` noisy
/// observations of a smooth function; the threshold is drawn within the
/// observed range so failure probabilities are nontrivial.
pub fn random_problem(seed: u64, n_pool: usize, d: usize, levels: usize, n_obs: usize) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = Arc::new(
        EmbeddingPool::new((0..n_pool).map(|_| (0..d).map(|_| rng.random_range(0.0..3.0)).collect()).collect()).unwrap(),
    );
    let fid = if levels == 1 { FidelityConfig::single() } else { FidelityConfig::new(vec![1.0, 0.1]).unwrap() };
    let hyper = GpHyperparams {
        lengthscales: (0..d).map(|_| rng.random_range(0.4..2.0)).collect(),
        signal_var: rng.random_range(0.5..2.0),
        levels: (1..levels)
            .map(|_| LevelParams {
                lengthscales: (0..d).map(|_| rng.random_range(0.5..2.0)).collect(),
                signal_var: rng.random_range(0.01..0.3),
                noise_var: rng.random_range(1e-4..0.05),
            })
            .collect(),
        jitter: 1e-8,
    };
    let phase: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..6.0)).collect();
    let mut log = EvaluationLog::new();
    let mut order: Vec<AugmentedInput> = (0..n_pool).flat_map(|i| (0..levels).map(move |l| AugmentedInput::new(i, l))).collect();
    for k in 0..n_obs.min(order.len()) {
        let j = rng.random_range(k..order.len());
        order.swap(k, j);
        let y = order[k];
        let x = pool.point(y.point_index);
        let f: f64 = x.iter().zip(&phase).map(|(v, p)| (v + p).sin()).sum::<f64>() + 0.1 * y.level as f64;
        log.push(y, f + 0.02 * rng.sample::<f64, _>(StandardNormal), 1).unwrap();
    }
    let vals: Vec<f64> = log.values().collect();
    let (lo, hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let gamma = if vals.is_empty() { 0.0 } else { rng.random_range(lo..=hi) };
    Problem { pool, log, hyper, fid, gamma }
}

pub fn level0_targets(n: usize) -> Vec<AugmentedInput> {
    (0..n).map(|i| AugmentedInput::new(i, 0)).collect()
}

pub fn unevaluated(state: &PosteriorState, fid: &FidelityConfig) -> Vec<AugmentedInput> {
    (0..state.pool().len())
        .flat_map(|i| (0..fid.levels()).map(move |l| AugmentedInput::new(i, l)))
        .filter(|y| !state.inputs().contains(y))
        .collect()
}

/// Greedy selection recomputing `J` from scratch for every candidate at every
/// step. Stops after `max_picks` picks or once the cost reaches `budget`.
pub fn dense_greedy(
    state: &PosteriorState,
    candidates: &[AugmentedInput],
    targets: &[AugmentedInput],
    fid: &FidelityConfig,
    max_picks: usize,
    budget: f64,
) -> Vec<(AugmentedInput, f64)> {
    let mut cands = candidates.to_vec();
    cands.sort();
    let mut chosen: Vec<AugmentedInput> = Vec::new();
    let mut out = Vec::new();
    let mut spent = 0.0;
    while out.len() < max_picks && spent < budget - 1e-9 {
        let j0 = acquisition_j(state, &PendingSet::new(state, chosen.clone()).unwrap(), targets).unwrap();
        let mut best: Option<(AugmentedInput, f64, f64)> = None;
        for &c in &cands {
            if chosen.contains(&c) {
                continue;
            }
            let mut trial = chosen.clone();
            trial.push(c);
            let Ok(p) = PendingSet::new(state, trial) else { continue };
            let dj = (acquisition_j(state, &p, targets).unwrap() - j0).min(0.0);
            let obj = dj / fid.cost(c.level);
            if best.is_none_or(|(_, _, b)| obj < b) {
                best = Some((c, dj, obj));
            }
        }
        let Some((c, dj, _)) = best else { break };
        chosen.push(c);
        spent += fid.cost(c.level);
        out.push((c, dj));
    }
    out
}

/// Monte Carlo mean and standard error of the exact estimator variance after
/// observing `pending`, over futures drawn from the posterior predictive.
pub fn simulated_future_variance(state: &PosteriorState, pending: &[AugmentedInput], samples: usize, seed: u64) -> (f64, f64) {
    let targets = level0_targets(state.pool().len());
    let (mu, _) = state.normalized_mean_var(&targets);
    let c_tt = state.normalized_cross_cov(&targets, &targets);
    let c_tm = state.normalized_cross_cov(&targets, pending);
    let mut c_mm = state.normalized_cross_cov(pending, pending);
    for (i, y) in pending.iter().enumerate() {
        c_mm[(i, i)] += state.hyper().noise(y.level);
    }
    let chol = Cholesky::new(c_mm).expect("pending covariance");
    // A = C_tm L^{-T}, so future means are mu + A z and the covariance drops by A A^T
    let mut at = c_tm.transpose();
    chol.l_dirty().solve_lower_triangular_mut(&mut at);
    let a = at.transpose();
    let cov = &c_tt - &a * a.transpose();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = state.gamma_normalized();
    let mu = DVector::from_vec(mu);
    let vals: Vec<f64> = (0..samples)
        .map(|_| {
            let z = DVector::from_fn(pending.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
            let m = &mu + &a * z;
            variance_from_moments(m.as_slice(), &cov, g)
        })
        .collect();
    let n = samples as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Dense `cov(a, X) cov(X, X)^{-1} cov(X, b)` with observation noise on the
/// pending block.
pub fn dense_projected_cov(state: &PosteriorState, pending: &[AugmentedInput], a: AugmentedInput, b: AugmentedInput) -> f64 {
    let mut c_mm = state.normalized_cross_cov(pending, pending);
    for (i, y) in pending.iter().enumerate() {
        c_mm[(i, i)] += state.hyper().noise(y.level);
    }
    let ca = state.normalized_cross_cov(&[a], pending);
    let cb = state.normalized_cross_cov(pending, &[b]);
    let sol = c_mm.lu().solve(&cb).expect("solve");
    (ca * sol)[(0, 0)]
}

#[allow(clippy::too_many_arguments)]
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson over `[a, b]`, pre-split into `pieces` panels so narrow
/// peaks are not stepped over.
pub fn adaptive_integral(f: &dyn Fn(f64) -> f64, a: f64, b: f64, pieces: usize, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|k| {
            let (lo, hi) = (a + k as f64 * h, a + (k + 1) as f64 * h);
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
            simpson(f, lo, hi, fa, fm, fb, whole, tol / pieces as f64, 40)
        })
        .sum()
}

fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `P(X <= a, Y <= b)` by nested adaptive quadrature of the bivariate
/// density; `|r| = 1` reduces to a one-dimensional integral.
pub fn phi2_by_quadrature(a: f64, b: f64, r: f64) -> f64 {
    const LIM: f64 = 9.0;
    if r >= 1.0 {
        return adaptive_integral(&phi, -LIM, a.min(b).min(LIM), 16, 1e-13);
    }
    if r <= -1.0 {
        return adaptive_integral(&phi, (-b).max(-LIM), a.min(LIM), 16, 1e-13);
    }
    let s = (1.0 - r * r).sqrt();
    let norm = 1.0 / (2.0 * std::f64::consts::PI * s);
    let inner = |x: f64| {
        // y | x is N(r x, s^2); integrate the joint density over its support
        let lo = (r * x - LIM * s).max(-LIM);
        let hi = b.min(r * x + LIM * s);
        let dens = |y: f64| norm * (-(x * x - 2.0 * r * x * y + y * y) / (2.0 * s * s)).exp();
        adaptive_integral(&dens, lo, hi, 8, 1e-13)
    };
    adaptive_integral(&inner, -LIM, a.min(LIM), 24, 1e-12)
}

/// Hyperparameters with unit lengthscales and no fidelity levels.
pub fn unit_hyper(d: usize) -> GpHyperparams {
    GpHyperparams { lengthscales: vec![1.0; d], signal_var: 1.0, levels: vec![], jitter: 1e-8 }
}
