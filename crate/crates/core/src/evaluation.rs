//! Importance-sampled rate estimation, recall statistics, retention-recall
//! curves and the multilevel-splitting cost bound.

use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::estimator::FailureField;
use crate::seeds::stream_rng;

/// Probabilities below this are raised to it before exponentiation.
pub const PROB_FLOOR: f64 = 1e-12;

/// Per-point sampling weights and their normalization `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    scores: Vec<f64>,
    q: Vec<f64>,
}

impl ScoreVector {
    /// Every score must be finite and strictly positive, so each point can be
    /// drawn and the estimator stays unbiased.
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(invalid("score vector is empty"));
        }
        if let Some(i) = scores.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(invalid(format!("score of point {i} is {} (must be positive)", scores[i])));
        }
        let total: f64 = scores.iter().sum();
        if !total.is_finite() {
            return Err(invalid("scores overflow when summed"));
        }
        let q = scores.iter().map(|s| s / total).collect();
        Ok(Self { scores, q })
    }

    /// Raises nonnegative raw scores to at least `rel_floor` times their
    /// maximum first.
    pub fn floored(raw: Vec<f64>, rel_floor: f64) -> Result<Self> {
        if let Some(i) = raw.iter().position(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(invalid(format!("score of point {i} is {} (must be finite, nonnegative)", raw[i])));
        }
        let max = raw.iter().cloned().fold(0.0, f64::max);
        if max <= 0.0 {
            return Err(invalid("all scores are zero"));
        }
        let floor = max * rel_floor;
        Self::new(raw.into_iter().map(|s| s.max(floor)).collect())
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.q
    }

    /// Point indices by descending score; ties by index.
    pub fn ranking(&self) -> Vec<usize> {
        rank_descending(&self.scores)
    }
}

/// `max(p, 1e-12)^alpha` per point.
pub fn importance_scores(field: &FailureField, alpha: f64) -> Result<ScoreVector> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(invalid(format!("exponent must be finite and nonnegative, got {alpha}")));
    }
    ScoreVector::new(field.p.iter().map(|p| p.max(PROB_FLOOR).powf(alpha)).collect())
}

fn check_truth(scores: &ScoreVector, truth: &[bool]) -> Result<usize> {
    if truth.len() != scores.len() {
        return Err(invalid(format!("{} labels for {} scored points", truth.len(), scores.len())));
    }
    let failures = truth.iter().filter(|t| **t).count();
    if failures == 0 {
        return Err(invalid("no failures among the labelled points"));
    }
    Ok(failures)
}

/// Draws and the resulting estimate for one importance-sampling trial.
fn run_trial(sampler: &WeightedIndex<f64>, q: &[f64], truth: &[bool], failures: usize, k: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let n = q.len() as f64;
    let mut sum = 0.0;
    let mut found = vec![false; q.len()];
    let mut distinct = 0usize;
    for _ in 0..k {
        let i = sampler.sample(rng);
        if truth[i] {
            sum += 1.0 / (n * q[i]);
            if !found[i] {
                found[i] = true;
                distinct += 1;
            }
        }
    }
    (sum / k as f64, distinct as f64 / failures as f64)
}

/// One trial of `k` i.i.d. draws from `q`; returns `(p_hat, recall)`.
pub fn is_rate_trial(scores: &ScoreVector, truth: &[bool], k: usize, seed: u64) -> Result<(f64, f64)> {
    let failures = check_truth(scores, truth)?;
    if k == 0 {
        return Err(invalid("need at least one draw"));
    }
    let sampler = WeightedIndex::new(scores.probabilities()).map_err(|e| invalid(e.to_string()))?;
    Ok(run_trial(&sampler, scores.probabilities(), truth, failures, k, &mut stream_rng(seed, 0)))
}

/// Summary of repeated importance-sampling trials of one sampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateReport {
    pub p_true: f64,
    pub p_hat_mean: f64,
    /// Sample variance of `p_hat` over `p_true^2`.
    pub relative_variance: f64,
    pub recall_mean: f64,
    pub se_p_hat: f64,
    pub se_relative_variance: f64,
    pub se_recall: f64,
    pub trials: usize,
}

/// Runs `trials` independent trials. Trial `t` uses the ChaCha8 generator
/// seeded with `seed` on stream `t`, so results do not depend on thread count.
pub fn repeated_is_trials(scores: &ScoreVector, truth: &[bool], k: usize, trials: usize, seed: u64) -> Result<RateReport> {
    let failures = check_truth(scores, truth)?;
    if k == 0 {
        return Err(invalid("need at least one draw"));
    }
    if trials < 2 {
        return Err(invalid("need at least two trials"));
    }
    let q = scores.probabilities();
    let sampler = WeightedIndex::new(q).map_err(|e| invalid(e.to_string()))?;
    let outcomes: Vec<(f64, f64)> = (0..trials as u64)
        .into_par_iter()
        .map(|t| run_trial(&sampler, q, truth, failures, k, &mut stream_rng(seed, t)))
        .collect();
    let p_true = failures as f64 / q.len() as f64;
    let t = trials as f64;
    let p_hats: Vec<f64> = outcomes.iter().map(|o| o.0).collect();
    let recalls: Vec<f64> = outcomes.iter().map(|o| o.1).collect();
    let (p_mean, p_var) = mean_and_sample_var(&p_hats);
    let (r_mean, r_var) = mean_and_sample_var(&recalls);
    let m4 = p_hats.iter().map(|v| (v - p_mean).powi(4)).sum::<f64>() / t;
    let var_of_var = ((m4 - p_var * p_var * (t - 3.0) / (t - 1.0)) / t).max(0.0);
    Ok(RateReport {
        p_true,
        p_hat_mean: p_mean,
        relative_variance: p_var / (p_true * p_true),
        recall_mean: r_mean,
        se_p_hat: (p_var / t).sqrt(),
        se_relative_variance: var_of_var.sqrt() / (p_true * p_true),
        se_recall: (r_var / t).sqrt(),
        trials,
    })
}

fn mean_and_sample_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var)
}

/// Exact `E[p_hat]` by summing over every point of the pool.
pub fn exact_expected_estimate(scores: &ScoreVector, truth: &[bool]) -> Result<f64> {
    check_truth(scores, truth)?;
    let n = scores.len() as f64;
    Ok(scores.probabilities().iter().zip(truth).map(|(q, &t)| if t { q * (1.0 / (n * q)) } else { 0.0 }).sum())
}

/// Exact `Var(p_hat) / p^2` for `k` draws.
pub fn exact_relative_variance(scores: &ScoreVector, truth: &[bool], k: usize) -> Result<f64> {
    let failures = check_truth(scores, truth)?;
    if k == 0 {
        return Err(invalid("need at least one draw"));
    }
    let n = scores.len() as f64;
    let p = failures as f64 / n;
    let second: f64 = scores.probabilities().iter().zip(truth).filter(|(_, &t)| t).map(|(q, _)| 1.0 / (n * n * q)).sum();
    Ok((second - p * p).max(0.0) / (k as f64 * p * p))
}

/// Mean and standard error of one statistic across independent runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedSummary {
    pub mean: f64,
    pub se: f64,
    pub runs: usize,
}

impl SeedSummary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("no runs to summarize"));
        }
        let (mean, var) = mean_and_sample_var(values);
        Ok(Self { mean, se: (var / values.len() as f64).sqrt(), runs: values.len() })
    }
}

fn rank_descending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Retention multiples `0.5, 1.0, ..., 10.0`.
pub fn retention_grid() -> Vec<f64> {
    (1..=20).map(|k| k as f64 * 0.5).collect()
}

/// Recall when the first `ceil(t * F)` points of `order` are retained, with
/// `F` the failure count, for each `t` on the retention grid.
pub fn retention_recall_from_order(order: &[usize], truth: &[bool]) -> Result<Vec<(f64, f64)>> {
    if order.len() != truth.len() {
        return Err(invalid("ordering and labels differ in length"));
    }
    let failures = truth.iter().filter(|t| **t).count();
    if failures == 0 {
        return Err(invalid("retention is measured in failure counts, and there are none"));
    }
    let mut prefix = Vec::with_capacity(order.len() + 1);
    prefix.push(0usize);
    for &i in order {
        if i >= truth.len() {
            return Err(invalid(format!("ordering names point {i} outside the pool")));
        }
        prefix.push(prefix.last().unwrap() + truth[i] as usize);
    }
    Ok(retention_grid()
        .into_iter()
        .map(|t| {
            let keep = ((t * failures as f64 - 1e-9).ceil() as usize).min(order.len());
            (t, prefix[keep] as f64 / failures as f64)
        })
        .collect())
}

/// Retention-recall of the surrogate's failure probabilities.
pub fn retention_recall_curve(field: &FailureField, truth: &[bool]) -> Result<Vec<(f64, f64)>> {
    if field.len() != truth.len() {
        return Err(invalid("failure field and labels differ in length"));
    }
    retention_recall_from_order(&rank_descending(&field.p), truth)
}

/// What the splitting calculator is given besides the rate and step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplittingTarget {
    RelativeVariance(f64),
    Budget(f64),
}

/// Idealized multilevel splitting with one trajectory per level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplittingBound {
    pub levels: usize,
    pub particles: usize,
    pub simulations: f64,
    pub relative_variance: f64,
}

/// Splitting cost for conditional level probability `1 - delta`: `levels =
/// floor(ln p / ln(1 - delta))`. A target variance fixes `particles =
/// floor(levels * delta / (rv (1 - delta)))` and the simulation count
/// `round(particles (1 + delta levels))`; a budget yields the variance lower
/// bound at the largest affordable particle count.
pub fn splitting_bound(p_gamma: f64, delta: f64, target: SplittingTarget) -> Result<SplittingBound> {
    if !(p_gamma > 0.0 && p_gamma < 1.0) {
        return Err(invalid(format!("rate must lie in (0, 1), got {p_gamma}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    let levels = (p_gamma.ln() / (1.0 - delta).ln()).floor() as usize;
    if levels == 0 {
        return Err(invalid("rate exceeds 1 - delta, so no splitting level is needed"));
    }
    let k = levels as f64;
    match target {
        SplittingTarget::RelativeVariance(rv) => {
            if !(rv > 0.0 && rv.is_finite()) {
                return Err(invalid(format!("target relative variance must be positive, got {rv}")));
            }
            let particles = (k * delta / (rv * (1.0 - delta))).floor() as usize;
            if particles == 0 {
                return Err(invalid("target relative variance is met without any particles"));
            }
            let n = particles as f64;
            Ok(SplittingBound { levels, particles, simulations: (n + delta * n * k).round(), relative_variance: rv })
        }
        SplittingTarget::Budget(b) => {
            if !(b > 0.0 && b.is_finite()) {
                return Err(invalid(format!("budget must be positive, got {b}")));
            }
            let n = b / (1.0 + delta * k);
            Ok(SplittingBound {
                levels,
                particles: n.floor() as usize,
                simulations: b,
                relative_variance: k * delta / (n * (1.0 - delta)),
            })
        }
    }
}

/// Writes `retention_multiple,recall` rows.
pub fn write_retention_recall_csv<W: Write>(mut w: W, curve: &[(f64, f64)]) -> Result<()> {
    writeln!(w, "retention_multiple,recall")?;
    for (t, r) in curve {
        writeln!(w, "{t},{r}")?;
    }
    Ok(())
}

/// Writes `method,p_hat_mean,rv,recall,se_rv,se_recall` rows.
pub fn write_rate_report_csv<W: Write>(mut w: W, rows: &[(String, RateReport)]) -> Result<()> {
    writeln!(w, "method,p_hat_mean,rv,recall,se_rv,se_recall")?;
    for (m, r) in rows {
        writeln!(w, "{m},{},{},{},{},{}", r.p_hat_mean, r.relative_variance, r.recall_mean, r.se_relative_variance, r.se_recall)?;
    }
    Ok(())
}
