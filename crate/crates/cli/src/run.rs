//! Executes a configured method and writes its artifacts.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};

use rare_sampler::baselines::{mc_scores, random_scores, read_score_csv, run_cross_entropy, CeConfig};
use rare_sampler::driver::{run_experiment, Acquisition, BudgetRule, MergeKey, RunConfig};
use rare_sampler::evaluation::{
    importance_scores, repeated_is_trials, retention_recall_curve, retention_recall_from_order, write_rate_report_csv,
    write_retention_recall_csv, RateReport, ScoreVector,
};
use rare_sampler::gp::TrainOptions;
use rare_sampler::oracle::{ExternalOracle, Oracle, SyntheticOracle, TableOracle};
use rare_sampler::synthetic::{generate_pool, ground_truth_labels, SyntheticSpec};
use rare_sampler::{EmbeddingPool, FidelityConfig};

use crate::config::{BudgetRuleName, Config, MergeKeyName, Method, OracleBinding, PoolSource};

/// The pool plus whatever ground truth is known about it.
pub struct Problem {
    pub pool: Arc<EmbeddingPool>,
    pub truth: Option<Vec<bool>>,
    pub gamma: f64,
    pub synthetic: Option<SyntheticSpec>,
}

pub fn load_problem(cfg: &Config) -> Result<Problem> {
    match &cfg.pool {
        PoolSource::Synthetic { size } => {
            let defaults = SyntheticSpec::default();
            let spec = SyntheticSpec {
                n: *size,
                gamma: cfg.threshold.unwrap_or(defaults.gamma),
                cheap_cost: cfg.costs.get(1).copied().unwrap_or(defaults.cheap_cost),
                seed: cfg.seed,
                ..defaults
            };
            let pool = Arc::new(generate_pool(&spec)?);
            let truth = ground_truth_labels(&pool, &spec);
            Ok(Problem { pool, truth: Some(truth), gamma: spec.gamma, synthetic: Some(spec) })
        }
        PoolSource::Csv(path) => {
            let file = File::open(path).with_context(|| format!("opening pool file {}", path.display()))?;
            let (pool, values) = EmbeddingPool::read_csv(BufReader::new(file)).with_context(|| format!("reading pool file {}", path.display()))?;
            let gamma = cfg.threshold.expect("validated: csv pools carry a threshold");
            let truth = values.map(|v| v.iter().map(|f| *f <= gamma).collect());
            Ok(Problem { pool: Arc::new(pool), truth, gamma, synthetic: None })
        }
    }
}

fn open_oracle(cfg: &Config, problem: &Problem) -> Result<Box<dyn Oracle>> {
    Ok(match &cfg.oracle {
        OracleBinding::Synthetic => {
            let spec = problem.synthetic.clone().expect("validated: synthetic oracle needs a synthetic pool");
            Box::new(SyntheticOracle::new(spec, problem.pool.clone())?)
        }
        OracleBinding::Csv(path) => {
            let file = File::open(path).with_context(|| format!("opening value table {}", path.display()))?;
            Box::new(TableOracle::read_csv(BufReader::new(file)).with_context(|| format!("reading value table {}", path.display()))?)
        }
        OracleBinding::External { command, args, timeout } => {
            Box::new(ExternalOracle::spawn(command, args, *timeout).with_context(|| format!("starting oracle `{command}`"))?)
        }
    })
}

fn run_config(cfg: &Config, gamma: f64) -> Result<RunConfig> {
    let fidelity = if cfg.method.multifidelity() { FidelityConfig::new(cfg.costs.clone())? } else { FidelityConfig::single() };
    Ok(RunConfig {
        initial_budget: cfg.initial_budget,
        batch_budget: cfg.batch_budget,
        batches: cfg.batches,
        clusters: cfg.clusters,
        initial_clusters: cfg.initial_clusters,
        overbudget: cfg.overbudget,
        alpha: cfg.alpha,
        seed: cfg.seed,
        train: TrainOptions { lr: cfg.learning_rate, iters: cfg.train_iters },
        budget_rule: match cfg.budget_rule {
            BudgetRuleName::Strict => BudgetRule::Strict,
            BudgetRuleName::Inclusive => BudgetRule::Inclusive,
        },
        merge_key: match cfg.merge_key {
            MergeKeyName::CostNormalized => MergeKey::CostNormalized,
            MergeKeyName::Raw => MergeKey::Raw,
        },
        acquisition: if matches!(cfg.method, Method::Bams | Method::Bas) { Acquisition::Greedy } else { Acquisition::Random },
        ..RunConfig::new(gamma, fidelity)
    })
}

pub fn write_scores(path: &Path, scores: &ScoreVector) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "point_index,score")?;
    for (i, s) in scores.scores().iter().enumerate() {
        writeln!(w, "{i},{s}")?;
    }
    w.flush()?;
    Ok(())
}

/// Importance-sampling trial settings; each trial draws
/// `ceil(draws_per_failure * F)` samples for `F` true failures.
#[derive(Debug, Clone, Copy)]
pub struct Trials {
    pub draws_per_failure: f64,
    pub count: usize,
    pub seed: u64,
}

/// Writes `retention_recall.csv` and `rate_report.csv` for a sampler and
/// returns its rate report.
pub fn write_evaluation(out: &Path, label: &str, scores: &ScoreVector, curve: &[(f64, f64)], truth: &[bool], trials: Trials) -> Result<RateReport> {
    let failures = truth.iter().filter(|t| **t).count();
    if failures == 0 {
        bail!("the ground truth has no failures, so recall and relative variance are undefined");
    }
    let draws = (trials.draws_per_failure * failures as f64).ceil().max(1.0) as usize;
    let report = repeated_is_trials(scores, truth, draws, trials.count, trials.seed)?;
    write_retention_recall_csv(BufWriter::new(File::create(out.join("retention_recall.csv"))?), curve)?;
    let mut w = BufWriter::new(File::create(out.join("rate_report.csv"))?);
    write_rate_report_csv(&mut w, &[(label.to_string(), report)])?;
    w.flush()?;
    Ok(report)
}

/// Runs the configured method, writing everything under `out`.
pub fn run(cfg: &Config, out: &Path) -> Result<()> {
    let mut problem = load_problem(cfg)?;
    if problem.truth.as_ref().is_some_and(|t| !t.contains(&true)) {
        eprintln!("note: no pool point fails at threshold {}, so recall and relative variance are undefined", problem.gamma);
        problem.truth = None;
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let n = problem.pool.len();
    let (scores, curve, evaluations) = match cfg.method {
        Method::Bams | Method::Bas | Method::McGp | Method::McmGp => {
            let oracle = open_oracle(cfg, &problem)?;
            let result = run_experiment(&problem.pool, &run_config(cfg, problem.gamma)?, oracle.as_ref())?;
            result.write_dir(out)?;
            let field = result.final_field();
            let curve = match &problem.truth {
                Some(t) => Some(retention_recall_curve(field, t)?),
                None => None,
            };
            (importance_scores(field, cfg.alpha)?, curve, result.log.len())
        }
        Method::Ce => {
            let oracle = open_oracle(cfg, &problem)?;
            let ce = CeConfig {
                batches: cfg.batches,
                initial: cfg.initial_budget.ceil() as usize,
                per_batch: cfg.batch_budget.ceil() as usize,
                elites: cfg.ce_elites,
            };
            let run = run_cross_entropy(&problem.pool, oracle.as_ref(), ce, cfg.seed)?;
            run.log.write_csv(BufWriter::new(File::create(out.join("log.csv"))?))?;
            let curve = match &problem.truth {
                Some(t) => Some(retention_recall_from_order(&run.scores.ranking(), t)?),
                None => None,
            };
            (run.scores, curve, run.log.len())
        }
        Method::Mc => {
            let (_, order) = mc_scores(n, cfg.seed)?;
            let curve = match &problem.truth {
                Some(t) => Some(retention_recall_from_order(&order, t)?),
                None => None,
            };
            (random_scores(n, cfg.seed)?, curve, 0)
        }
        Method::ExternalScores => {
            let path = cfg.scores.as_ref().expect("validated: external-scores carries a score file");
            let file = File::open(path).with_context(|| format!("opening score file {}", path.display()))?;
            let scores = read_score_csv(BufReader::new(file), n).with_context(|| format!("reading score file {}", path.display()))?;
            let curve = match &problem.truth {
                Some(t) => Some(retention_recall_from_order(&scores.ranking(), t)?),
                None => None,
            };
            (scores, curve, 0)
        }
    };
    write_scores(&out.join("scores.csv"), &scores)?;
    println!("method {}: {evaluations} evaluations, artifacts in {}", cfg.method.label(), out.display());
    match (&problem.truth, curve) {
        (Some(truth), Some(curve)) => {
            let trials = Trials { draws_per_failure: cfg.draws_per_failure, count: cfg.trials, seed: cfg.seed };
            let r = write_evaluation(out, cfg.method.label(), &scores, &curve, truth, trials)?;
            println!(
                "recall {:.4} +- {:.4}, 100 RV {:.4} +- {:.4} over {} trials (true rate {:.6})",
                r.recall_mean,
                r.se_recall,
                100.0 * r.relative_variance,
                100.0 * r.se_relative_variance,
                r.trials,
                r.p_true
            );
        }
        _ => eprintln!("note: no usable ground truth, so retention_recall.csv and rate_report.csv were not written"),
    }
    Ok(())
}
