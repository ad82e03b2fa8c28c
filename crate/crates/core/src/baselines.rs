//! Comparison samplers: random acquisition, plain Monte Carlo scores, the
//! cross-entropy method, and externally supplied scores.

use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::acquisition::COST_EPS;
use crate::error::{invalid, Error, Result};
use crate::evaluation::{ScoreVector, PROB_FLOOR};
use crate::gp::EvaluationLog;
use crate::oracle::Oracle;
use crate::pool::{AugmentedInput, EmbeddingPool, FidelityConfig};
use crate::seeds::{derive_seed, stream_rng};

/// Uniformly random distinct augmented inputs not yet in `log`, drawn until
/// their total cost reaches `budget`. Returns fewer when every input has been
/// used.
pub fn random_acquisition(
    num_points: usize,
    fid: &FidelityConfig,
    budget: f64,
    log: &EvaluationLog,
    seed: u64,
) -> Result<Vec<AugmentedInput>> {
    if !(budget > 0.0 && budget.is_finite()) {
        return Err(invalid(format!("budget must be positive, got {budget}")));
    }
    let mut free: Vec<AugmentedInput> = (0..num_points)
        .flat_map(|i| (0..fid.levels()).map(move |l| AugmentedInput::new(i, l)))
        .filter(|y| !log.contains(*y))
        .collect();
    let mut rng = stream_rng(seed, 0);
    let mut picked = Vec::new();
    let mut spent = 0.0;
    let mut k = 0;
    // incremental Fisher-Yates: only the drawn prefix is shuffled
    while spent < budget - COST_EPS && k < free.len() {
        let j = rng.random_range(k..free.len());
        free.swap(k, j);
        picked.push(free[k]);
        spent += fid.cost(free[k].level);
        k += 1;
    }
    Ok(picked)
}

/// Uniform sampling weights with a random ordering used to break the ties
/// when ranking points.
pub fn mc_scores(n: usize, seed: u64) -> Result<(ScoreVector, Vec<usize>)> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, 0));
    Ok((ScoreVector::uniform(n)?, order))
}

/// Independent `U(0, 1]` weights: the random importance sampler of the plain
/// Monte Carlo baseline.
pub fn random_scores(n: usize, seed: u64) -> Result<ScoreVector> {
    let mut rng = stream_rng(seed, 0);
    ScoreVector::new((0..n).map(|_| 1.0 - rng.random::<f64>()).collect())
}

/// Diagonal Gaussian sampling distribution of the cross-entropy method.
#[derive(Debug, Clone, PartialEq)]
pub struct CeState {
    pub mean: Vec<f64>,
    pub variances: Vec<f64>,
    pub elites: usize,
}

impl CeState {
    /// Mean and population variances of the `elites` lowest-valued records,
    /// variances raised to `floor` per dimension.
    pub fn from_elites(pool: &EmbeddingPool, batch: &[(usize, f64)], elites: usize, floor: &[f64]) -> Result<Self> {
        if batch.is_empty() || elites == 0 {
            return Err(invalid("cross-entropy update needs at least one elite"));
        }
        let mut sorted = batch.to_vec();
        sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let chosen = &sorted[..elites.min(sorted.len())];
        let d = pool.dim();
        let m = chosen.len() as f64;
        let mean: Vec<f64> = (0..d).map(|k| chosen.iter().map(|(i, _)| pool.point(*i)[k]).sum::<f64>() / m).collect();
        let variances = (0..d)
            .map(|k| {
                let v = chosen.iter().map(|(i, _)| (pool.point(*i)[k] - mean[k]).powi(2)).sum::<f64>() / m;
                v.max(floor[k])
            })
            .collect();
        Ok(Self { mean, variances, elites })
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        -0.5 * x
            .iter()
            .zip(&self.mean)
            .zip(&self.variances)
            .map(|((x, m), v)| (2.0 * std::f64::consts::PI * v).ln() + (x - m).powi(2) / v)
            .sum::<f64>()
    }
}

/// Settings of a cross-entropy run; each evaluation is at level 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CeConfig {
    pub batches: usize,
    pub initial: usize,
    pub per_batch: usize,
    pub elites: usize,
}

impl Default for CeConfig {
    fn default() -> Self {
        Self { batches: 3, initial: 20, per_batch: 15, elites: 5 }
    }
}

#[derive(Debug, Clone)]
pub struct CeRun {
    pub state: CeState,
    pub scores: ScoreVector,
    pub log: EvaluationLog,
    /// Mean observed value of each batch's evaluations.
    pub batch_means: Vec<f64>,
}

fn nearest_free(pool: &EmbeddingPool, x: &[f64], taken: &[bool]) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (i, p) in pool.iter().enumerate() {
        if taken[i] {
            continue;
        }
        let d: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, i));
        }
    }
    best.map(|(_, i)| i)
}

fn evaluate_into(oracle: &dyn Oracle, log: &mut EvaluationLog, points: &[usize], batch: usize) -> Result<Vec<(usize, f64)>> {
    let inputs: Vec<AugmentedInput> = points.iter().map(|&i| AugmentedInput::new(i, 0)).collect();
    let values = oracle.evaluate_batch(&inputs)?;
    for (y, v) in inputs.iter().zip(&values) {
        log.push(*y, *v, batch)?;
    }
    Ok(points.iter().copied().zip(values).collect())
}

/// Cross-entropy search: a random first batch, then Gaussian draws snapped to
/// the nearest unevaluated pool point, refitting the Gaussian to each batch's
/// elites. Final scores are the Gaussian density at every pool point.
pub fn run_cross_entropy(pool: &EmbeddingPool, oracle: &dyn Oracle, cfg: CeConfig, seed: u64) -> Result<CeRun> {
    if cfg.batches == 0 || cfg.initial == 0 || cfg.elites == 0 {
        return Err(invalid("cross-entropy needs at least one batch, initial sample and elite"));
    }
    let floor: Vec<f64> = pool.dim_variances().iter().map(|v| (1e-6 * v).max(f64::MIN_POSITIVE)).collect();
    let mut log = EvaluationLog::new();
    let mut taken = vec![false; pool.len()];
    let first: Vec<usize> = random_acquisition(pool.len(), &FidelityConfig::single(), cfg.initial as f64, &log, derive_seed(seed, 1))?
        .into_iter()
        .map(|y| y.point_index)
        .collect();
    for &i in &first {
        taken[i] = true;
    }
    let evals = evaluate_into(oracle, &mut log, &first, 1)?;
    let mut batch_means = vec![evals.iter().map(|e| e.1).sum::<f64>() / evals.len() as f64];
    let mut state = CeState::from_elites(pool, &evals, cfg.elites, &floor)?;
    for b in 2..=cfg.batches {
        let mut rng = stream_rng(derive_seed(seed, b as u64), 0);
        let mut chosen = Vec::with_capacity(cfg.per_batch);
        for _ in 0..cfg.per_batch {
            let x: Vec<f64> = state
                .mean
                .iter()
                .zip(&state.variances)
                .map(|(m, v)| m + v.sqrt() * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let Some(i) = nearest_free(pool, &x, &taken) else { break };
            taken[i] = true;
            chosen.push(i);
        }
        if chosen.is_empty() {
            break;
        }
        let evals = evaluate_into(oracle, &mut log, &chosen, b)?;
        batch_means.push(evals.iter().map(|e| e.1).sum::<f64>() / evals.len() as f64);
        state = CeState::from_elites(pool, &evals, cfg.elites, &floor)?;
    }
    let scores = gaussian_pdf_scores(&state, pool)?;
    Ok(CeRun { state, scores, log, batch_means })
}

/// Density of the sampling Gaussian at each pool point, normalized, with
/// points far in the tails raised to `1e-12` of the peak.
pub fn gaussian_pdf_scores(state: &CeState, pool: &EmbeddingPool) -> Result<ScoreVector> {
    if state.mean.len() != pool.dim() || state.variances.iter().any(|v| !(*v > 0.0)) {
        return Err(invalid("Gaussian state does not fit the pool"));
    }
    let logs: Vec<f64> = pool.iter().map(|x| state.log_density(x)).collect();
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    ScoreVector::floored(logs.iter().map(|l| (l - top).exp()).collect(), PROB_FLOOR)
}

/// Reads `point_index,score` rows covering every pool point exactly once.
/// Zero scores are raised to `1e-12` of the largest.
pub fn read_score_csv<R: BufRead>(r: R, num_points: usize) -> Result<ScoreVector> {
    let mut scores: Vec<Option<f64>> = vec![None; num_points];
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let ln = i + 1;
        if i == 0 {
            if line.trim() != "point_index,score" {
                return Err(Error::Parse { line: 1, message: "expected header `point_index,score`".into() });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let (a, b) = line
            .split_once(',')
            .ok_or_else(|| Error::Parse { line: ln, message: "expected `point_index,score`".into() })?;
        let idx: usize = a.trim().parse().map_err(|_| Error::Parse { line: ln, message: "bad point_index".into() })?;
        let s: f64 = b.trim().parse().map_err(|_| Error::Parse { line: ln, message: "bad score".into() })?;
        if idx >= num_points {
            return Err(Error::Parse { line: ln, message: format!("point {idx} outside a pool of {num_points}") });
        }
        if !(s.is_finite() && s >= 0.0) {
            return Err(Error::Parse { line: ln, message: "score must be finite and nonnegative".into() });
        }
        if scores[idx].replace(s).is_some() {
            return Err(Error::Parse { line: ln, message: format!("duplicate score for point {idx}") });
        }
    }
    if let Some(missing) = scores.iter().position(Option::is_none) {
        return Err(invalid(format!("no score for point {missing}")));
    }
    ScoreVector::floored(scores.into_iter().map(|s| s.expect("checked")).collect(), PROB_FLOOR)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::TableOracle;
    use std::collections::HashMap;

    #[test]
    fn random_acquisition_budgets() {
        let log = EvaluationLog::new();
        let single = random_acquisition(100, &FidelityConfig::single(), 15.0, &log, 3).unwrap();
        assert_eq!(single.len(), 15);
        assert!(single.iter().all(|y| y.level == 0));
        assert_eq!(single, random_acquisition(100, &FidelityConfig::single(), 15.0, &log, 3).unwrap());
        let fid = FidelityConfig::new(vec![1.0, 0.1]).unwrap();
        let multi = random_acquisition(100, &fid, 10.0, &log, 4).unwrap();
        let cost: f64 = multi.iter().map(|y| fid.cost(y.level)).sum();
        let last = fid.cost(multi.last().unwrap().level);
        assert!(cost >= 10.0 - COST_EPS && cost - last < 10.0 - COST_EPS);
        let mut sorted = multi.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), multi.len());
        let tiny = random_acquisition(3, &FidelityConfig::single(), 10.0, &log, 0).unwrap();
        assert_eq!(tiny.len(), 3);
        let mut used = EvaluationLog::new();
        used.push(AugmentedInput::new(0, 0), 1.0, 1).unwrap();
        assert!(!random_acquisition(3, &FidelityConfig::single(), 10.0, &used, 0).unwrap().contains(&AugmentedInput::new(0, 0)));
    }

    #[test]
    fn mc_scores_shape() {
        let (s, order) = mc_scores(50, 2).unwrap();
        assert!(s.probabilities().iter().all(|&q| (q - 0.02).abs() < 1e-15));
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(order, sorted);
        let r = random_scores(1000, 1).unwrap();
        assert!(r.scores().iter().all(|&u| u > 0.0 && u <= 1.0));
    }

    #[test]
    fn mc_order_recall_matches_random_expectation() {
        // a random order retains t F of N points, so expected recall is t F / N
        let n = 400;
        let truth: Vec<bool> = (0..n).map(|i| i % 40 == 0).collect();
        let f = 10.0;
        let reps = 2000;
        let mut acc = [0.0; 20];
        for seed in 0..reps {
            let (_, order) = mc_scores(n, seed).unwrap();
            let curve = crate::evaluation::retention_recall_from_order(&order, &truth).unwrap();
            for (a, (_, r)) in acc.iter_mut().zip(curve) {
                *a += r;
            }
        }
        for (k, a) in acc.iter().enumerate() {
            let t = 0.5 * (k + 1) as f64;
            let want = (t * f).ceil() / n as f64;
            assert!((a / reps as f64 - want).abs() < 0.01, "t = {t}: {} vs {want}", a / reps as f64);
        }
    }

    #[test]
    fn gaussian_density_formula() {
        let st = CeState { mean: vec![0.5, -1.0], variances: vec![0.25, 4.0], elites: 5 };
        let pts = [[0.5, -1.0], [0.0, 0.0], [1.0, 2.0], [-0.3, -1.5], [2.0, 1.0]];
        for p in pts {
            let direct = (-(p[0] - 0.5f64).powi(2) / 0.5 - (p[1] + 1.0f64).powi(2) / 8.0).exp()
                / (2.0 * std::f64::consts::PI * (0.25f64 * 4.0).sqrt());
            assert!((st.log_density(&p).exp() - direct).abs() < 1e-15);
        }
        let pool = EmbeddingPool::new(pts.iter().map(|p| p.to_vec()).collect()).unwrap();
        let s = gaussian_pdf_scores(&st, &pool).unwrap();
        let q = s.probabilities();
        assert!(q.iter().all(|&v| v <= q[0]));
        let ratio = (st.log_density(&pts[1]) - st.log_density(&pts[3])).exp();
        assert!((q[1] / q[3] - ratio).abs() < 1e-12 * ratio);
    }

    #[test]
    fn identical_elites_hit_the_floor() {
        let pool = EmbeddingPool::new(vec![vec![1.0, 2.0], vec![1.0, 2.0], vec![0.0, 0.0]]).unwrap();
        let st = CeState::from_elites(&pool, &[(0, 0.1), (1, 0.2)], 5, &[1e-6, 2e-6]).unwrap();
        assert_eq!(st.mean, vec![1.0, 2.0]);
        assert_eq!(st.variances, vec![1e-6, 2e-6]);
    }

    #[test]
    fn one_ce_batch_moves_toward_low_values() {
        let mut pts = Vec::new();
        for i in 0..30 {
            for j in 0..30 {
                pts.push(vec![i as f64 / 3.0, j as f64 / 3.0]);
            }
        }
        let pool = EmbeddingPool::new(pts).unwrap();
        let blob = [8.0, 8.0];
        let mut values = HashMap::new();
        for (i, p) in pool.iter().enumerate() {
            values.insert(AugmentedInput::new(i, 0), ((p[0] - blob[0]).powi(2) + (p[1] - blob[1]).powi(2)).sqrt());
        }
        let oracle = TableOracle::from_values(values);
        let dist = |s: &CeState| ((s.mean[0] - blob[0]).powi(2) + (s.mean[1] - blob[1]).powi(2)).sqrt();
        let cfg = CeConfig { batches: 1, initial: 20, per_batch: 20, elites: 5 };
        let before = run_cross_entropy(&pool, &oracle, cfg, 7).unwrap();
        let after = run_cross_entropy(&pool, &oracle, CeConfig { batches: 2, ..cfg }, 7).unwrap();
        assert!(dist(&after.state) < dist(&before.state));
        assert_eq!(after.log.len(), 40);
        let mut seen: Vec<_> = after.log.inputs().collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 40);
    }

    #[test]
    fn score_file() {
        let s = read_score_csv("point_index,score\n1,2\n0,0\n2,1\n".as_bytes(), 3).unwrap();
        assert_eq!(s.scores(), &[2e-12, 2.0, 1.0]);
        assert!(read_score_csv("point_index,score\n0,1\n".as_bytes(), 2).is_err());
        assert!(matches!(read_score_csv("point_index,score\n0,1\n0,2\n".as_bytes(), 2), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(read_score_csv("point_index,score\n5,1\n".as_bytes(), 2), Err(Error::Parse { line: 2, .. })));
    }
}
