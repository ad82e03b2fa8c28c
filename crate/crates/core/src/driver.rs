//! Batch loop: a random first batch, then per-cluster greedy queues merged
//! under a global budget, with hyperparameters retrained after every batch.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::acquisition::{select_batch, Selection, COST_EPS};
use crate::baselines::random_acquisition;
use crate::clustering::{cluster_with_merges, ClusterAssignment};
use crate::error::{invalid, Error, Result};
use crate::estimator::{failure_field_all, FailureField};
use crate::gp::{fit_posterior, train_hyperparameters, EvaluationLog, GpHyperparams, PosteriorState, TrainOptions};
use crate::oracle::Oracle;
use crate::pool::{AugmentedInput, EmbeddingPool, FidelityConfig};
use crate::seeds::derive_seed;

/// How a batch's picks must fit the budget `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BudgetRule {
    /// Accept a pick only if the total stays strictly below `m`.
    #[default]
    Strict,
    /// Accept a pick if the total does not exceed `m`.
    Inclusive,
}

/// Ordering used when the global merge compares queue heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MergeKey {
    /// Pool-scaled change in the objective divided by cost.
    #[default]
    CostNormalized,
    /// Pool-scaled change in the objective alone.
    Raw,
}

/// How later batches choose their inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Acquisition {
    #[default]
    Greedy,
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub initial_budget: f64,
    pub batch_budget: f64,
    /// Number of batches including the random first one.
    pub batches: usize,
    pub clusters: usize,
    /// k-means cluster count before merging.
    pub initial_clusters: usize,
    /// Per-cluster queue oversizing factor, at least 1.
    pub overbudget: f64,
    pub gamma: f64,
    /// Exponent of the importance sampler built from the final surrogate.
    pub alpha: f64,
    pub seed: u64,
    pub fidelity: FidelityConfig,
    pub train: TrainOptions,
    pub budget_rule: BudgetRule,
    pub merge_key: MergeKey,
    pub acquisition: Acquisition,
}

impl RunConfig {
    /// Defaults for a given threshold and fidelity set: 20 then 15 cost units
    /// per batch, three batches, 6 clusters from 12, overbudget 2, exponent 2.5.
    pub fn new(gamma: f64, fidelity: FidelityConfig) -> Self {
        Self {
            initial_budget: 20.0,
            batch_budget: 15.0,
            batches: 3,
            clusters: 6,
            initial_clusters: 12,
            overbudget: 2.0,
            gamma,
            alpha: 2.5,
            seed: 0,
            fidelity,
            train: TrainOptions::default(),
            budget_rule: BudgetRule::Strict,
            merge_key: MergeKey::CostNormalized,
            acquisition: Acquisition::Greedy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial_budget > 0.0 && self.batch_budget > 0.0) {
            return Err(invalid("budgets must be positive"));
        }
        if !(self.overbudget >= 1.0) {
            return Err(invalid(format!("overbudget must be at least 1, got {}", self.overbudget)));
        }
        if self.batches == 0 {
            return Err(invalid("need at least one batch"));
        }
        if self.clusters == 0 || self.clusters > self.initial_clusters {
            return Err(invalid(format!(
                "need 1 <= clusters ({}) <= initial clusters ({})",
                self.clusters, self.initial_clusters
            )));
        }
        if !self.gamma.is_finite() || !(self.alpha >= 0.0) {
            return Err(invalid("threshold must be finite and exponent nonnegative"));
        }
        Ok(())
    }
}

fn evaluate_into(oracle: &dyn Oracle, log: &mut EvaluationLog, inputs: &[AugmentedInput], batch: usize) -> Result<Vec<f64>> {
    let values = oracle.evaluate_batch(inputs)?;
    if values.len() != inputs.len() {
        return Err(invalid("oracle returned the wrong number of values"));
    }
    for (y, v) in inputs.iter().zip(&values) {
        if !v.is_finite() {
            return Err(Error::Oracle { input: *y, message: format!("non-finite value {v}") });
        }
        log.push(*y, *v, batch)?;
    }
    Ok(values)
}

/// Random distinct augmented inputs over every level until their cost
/// reaches the initial budget; evaluated and logged as batch 1.
pub fn run_initial_batch(pool: &EmbeddingPool, cfg: &RunConfig, oracle: &dyn Oracle) -> Result<EvaluationLog> {
    if pool.is_empty() {
        return Err(invalid("pool is empty"));
    }
    let mut log = EvaluationLog::new();
    let picks = random_acquisition(pool.len(), &cfg.fidelity, cfg.initial_budget, &log, derive_seed(cfg.seed, 0))?;
    evaluate_into(oracle, &mut log, &picks, 1)?;
    Ok(log)
}

/// One entry of a cluster queue, with the objective change rescaled from
/// the cluster average to the pool average.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueueItem {
    pub input: AugmentedInput,
    pub delta_j: f64,
    pub cost: f64,
}

/// A queue item accepted by the global merge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergedPick {
    pub cluster: usize,
    pub rank: usize,
    pub item: QueueItem,
}

/// Per-cluster queue budget `ceil(eta * m * N_s / N)`.
pub fn cluster_budget(overbudget: f64, budget: f64, cluster_size: usize, pool_size: usize) -> f64 {
    (overbudget * budget * cluster_size as f64 / pool_size as f64 - COST_EPS).ceil()
}

/// Greedy queue of each cluster: targets are its level-0 points, candidates
/// its unevaluated augmented inputs.
pub fn build_queues(state: &PosteriorState, assignment: &ClusterAssignment, cfg: &RunConfig) -> Result<Vec<Vec<QueueItem>>> {
    let n = state.pool().len();
    let evaluated: std::collections::HashSet<AugmentedInput> = state.inputs().iter().copied().collect();
    assignment
        .members()
        .par_iter()
        .map(|members| {
            let targets: Vec<AugmentedInput> = members.iter().map(|&i| AugmentedInput::new(i, 0)).collect();
            let candidates: Vec<AugmentedInput> = members
                .iter()
                .flat_map(|&i| (0..cfg.fidelity.levels()).map(move |l| AugmentedInput::new(i, l)))
                .filter(|y| !evaluated.contains(y))
                .collect();
            let budget = cluster_budget(cfg.overbudget, cfg.batch_budget, members.len(), n);
            let scale = members.len() as f64 / n as f64;
            match select_batch(state, &candidates, &targets, &cfg.fidelity, budget) {
                Ok(sel) => Ok(sel
                    .into_iter()
                    .map(|Selection { input, delta_j, cost }| QueueItem { input, delta_j: delta_j * scale, cost })
                    .collect()),
                Err(Error::EmptySelection) => Ok(Vec::new()),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Repeatedly takes the best feasible queue head until none fits the
/// budget. Heads that no longer fit stay in place, blocking their queue.
/// Ties go to the lowest cluster index.
pub fn merge_queues(queues: &[Vec<QueueItem>], budget: f64, rule: BudgetRule, key: MergeKey) -> Vec<MergedPick> {
    let mut heads = vec![0usize; queues.len()];
    let mut spent = 0.0;
    let mut out = Vec::new();
    while spent < budget - COST_EPS {
        let mut best: Option<(usize, f64)> = None;
        for (s, q) in queues.iter().enumerate() {
            let Some(item) = q.get(heads[s]) else { continue };
            let fits = match rule {
                BudgetRule::Strict => spent + item.cost < budget - COST_EPS,
                BudgetRule::Inclusive => spent + item.cost <= budget + COST_EPS,
            };
            if !fits {
                continue;
            }
            let k = match key {
                MergeKey::CostNormalized => item.delta_j / item.cost,
                MergeKey::Raw => item.delta_j,
            };
            if best.is_none_or(|(_, b)| k < b) {
                best = Some((s, k));
            }
        }
        let Some((s, _)) = best else { break };
        let item = queues[s][heads[s]];
        out.push(MergedPick { cluster: s, rank: heads[s], item });
        spent += item.cost;
        heads[s] += 1;
    }
    out
}

/// Everything decided for one greedy batch before evaluation.
#[derive(Debug, Clone)]
pub struct BatchPlan {
    pub assignment: ClusterAssignment,
    pub queues: Vec<Vec<QueueItem>>,
    pub picks: Vec<MergedPick>,
}

/// Clusters the pool, builds the per-cluster queues and merges them.
pub fn plan_bams_batch(state: &PosteriorState, cfg: &RunConfig, batch: usize) -> Result<BatchPlan> {
    cfg.validate()?;
    let s_hat = cfg.initial_clusters.min(state.pool().len());
    let s = cfg.clusters.min(s_hat);
    let assignment = cluster_with_merges(state.pool(), state.hyper(), s, s_hat, derive_seed(cfg.seed, 1000 + batch as u64))?;
    let queues = build_queues(state, &assignment, cfg)?;
    let picks = merge_queues(&queues, cfg.batch_budget, cfg.budget_rule, cfg.merge_key);
    Ok(BatchPlan { assignment, queues, picks })
}

/// Plans a greedy batch, evaluates the picks and appends them to `log`.
pub fn run_bams_batch(state: &PosteriorState, cfg: &RunConfig, oracle: &dyn Oracle, log: &mut EvaluationLog, batch: usize) -> Result<BatchPlan> {
    let plan = plan_bams_batch(state, cfg, batch)?;
    let inputs: Vec<AugmentedInput> = plan.picks.iter().map(|p| p.item.input).collect();
    evaluate_into(oracle, log, &inputs, batch)?;
    Ok(plan)
}

/// An evaluated input of one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchPick {
    pub input: AugmentedInput,
    /// Pool-scaled objective change; absent for random picks.
    pub delta_j: Option<f64>,
    pub cost: f64,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct BatchRecord {
    pub index: usize,
    pub picks: Vec<BatchPick>,
    /// Hyperparameters trained after this batch.
    pub hyper: GpHyperparams,
    /// Surrogate failure field after refitting on this batch.
    pub field: FailureField,
}

impl BatchRecord {
    /// Mean observed value of the batch's picks (NaN when empty).
    pub fn mean_value(&self) -> f64 {
        self.picks.iter().map(|p| p.value).sum::<f64>() / self.picks.len() as f64
    }

    pub fn cost(&self) -> f64 {
        self.picks.iter().map(|p| p.cost).sum()
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub log: EvaluationLog,
    pub batches: Vec<BatchRecord>,
    pub state: PosteriorState,
}

impl ExperimentResult {
    pub fn final_field(&self) -> &FailureField {
        &self.batches.last().expect("at least one batch").field
    }

    /// Writes `log.csv` and, per batch `k`, `scores_batch<k>.csv`,
    /// `selected_batch<k>.csv` and `hyperparams_batch<k>.txt`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.log.write_csv(BufWriter::new(File::create(dir.join("log.csv"))?))?;
        for b in &self.batches {
            let k = b.index;
            let mut w = BufWriter::new(File::create(dir.join(format!("scores_batch{k}.csv")))?);
            writeln!(w, "point_index,p_n,h_n")?;
            for (i, (p, h)) in b.field.p.iter().zip(&b.field.h).enumerate() {
                writeln!(w, "{i},{p},{h}")?;
            }
            w.flush()?;
            let mut w = BufWriter::new(File::create(dir.join(format!("selected_batch{k}.csv")))?);
            writeln!(w, "point_index,level,deltaJ,cost")?;
            for p in &b.picks {
                let dj = p.delta_j.map(|d| d.to_string()).unwrap_or_default();
                writeln!(w, "{},{},{dj},{}", p.input.point_index, p.input.level, p.cost)?;
            }
            w.flush()?;
            fs::write(dir.join(format!("hyperparams_batch{k}.txt")), b.hyper.to_text())?;
        }
        Ok(())
    }
}

fn record(index: usize, picks: Vec<BatchPick>, state: &PosteriorState) -> BatchRecord {
    BatchRecord { index, picks, hyper: state.hyper().clone(), field: failure_field_all(state) }
}

/// The full loop: random first batch, then greedy (or random) batches, with
/// warm-started hyperparameter training and a refit after each.
pub fn run_experiment(pool: &Arc<EmbeddingPool>, cfg: &RunConfig, oracle: &dyn Oracle) -> Result<ExperimentResult> {
    cfg.validate()?;
    let mut log = run_initial_batch(pool, cfg, oracle)?;
    let mut hyper = train_hyperparameters(pool, &log, &GpHyperparams::initial(pool, &cfg.fidelity), cfg.train)?;
    let mut state = fit_posterior(pool, &log, &hyper, cfg.gamma)?;
    let first = log
        .records()
        .iter()
        .map(|r| BatchPick { input: r.input, delta_j: None, cost: cfg.fidelity.cost(r.input.level), value: r.value })
        .collect();
    let mut batches = vec![record(1, first, &state)];
    for b in 2..=cfg.batches {
        let before = log.len();
        let deltas: Vec<Option<f64>> = match cfg.acquisition {
            Acquisition::Greedy => run_bams_batch(&state, cfg, oracle, &mut log, b)?.picks.iter().map(|p| Some(p.item.delta_j)).collect(),
            Acquisition::Random => {
                let picks = random_acquisition(pool.len(), &cfg.fidelity, cfg.batch_budget, &log, derive_seed(cfg.seed, 2000 + b as u64))?;
                evaluate_into(oracle, &mut log, &picks, b)?;
                vec![None; picks.len()]
            }
        };
        let picks = log.records()[before..]
            .iter()
            .zip(deltas)
            .map(|(r, dj)| BatchPick { input: r.input, delta_j: dj, cost: cfg.fidelity.cost(r.input.level), value: r.value })
            .collect();
        hyper = train_hyperparameters(pool, &log, &hyper, cfg.train)?;
        state = fit_posterior(pool, &log, &hyper, cfg.gamma)?;
        batches.push(record(b, picks, &state));
    }
    Ok(ExperimentResult { log, batches, state })
}
