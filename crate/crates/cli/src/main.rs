//! `rare-sampler`: adaptive failure search, baselines and rate reports.

mod config;
mod run;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{ArgGroup, Parser, Subcommand};

use rare_sampler::baselines::read_score_csv;
use rare_sampler::evaluation::{retention_recall_from_order, splitting_bound, SplittingTarget};
use rare_sampler::synthetic::{generate_pool, ground_truth_values, SyntheticSpec};
use rare_sampler::EmbeddingPool;

use config::Config;
use run::Trials;

/// Thread cap for the data-parallel parts (selection queues, IS trials).
const THREADS_VAR: &str = "RARE_SAMPLER_THREADS";

#[derive(Parser)]
#[command(name = "rare-sampler", version, about = "Multifidelity Gaussian-process search for rare failures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the method described by a TOML configuration file.
    Run {
        config: PathBuf,
        /// Overrides `[seeds] seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Simulation count an idealized splitting sampler needs for a target
    /// relative variance, or the variance it reaches on a budget.
    #[command(group(ArgGroup::new("target").required(true).args(["target_rv", "budget"])))]
    SplittingBound {
        #[arg(long)]
        p_gamma: f64,
        /// Per-level failure-probability step; levels pass with probability `1 - delta`.
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        target_rv: Option<f64>,
        #[arg(long)]
        budget: Option<f64>,
    },
    /// Write the synthetic pool (with its level-0 values) as CSV.
    GenSynthetic {
        #[arg(long, default_value_t = 20_000)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write every `(point_index, level, f)` for the csv oracle.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Rate and retention report for a per-point score file against a pool
    /// CSV with a truth column.
    ScoreReport {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        /// Failure means `f <= threshold`.
        #[arg(long)]
        threshold: f64,
        #[arg(long, default_value_t = 5.0)]
        draws_per_failure: f64,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "report")]
        out: PathBuf,
        #[arg(long, default_value = "external-scores")]
        label: String,
    },
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_VAR) else { return Ok(()) };
    let n: usize = v.trim().parse().with_context(|| format!("{THREADS_VAR} must be a positive integer, got `{v}`"))?;
    if n == 0 {
        bail!("{THREADS_VAR} must be a positive integer, got 0");
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    Ok(())
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<Config> {
    let src = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut cfg = Config::parse(&src, base).map_err(|d| anyhow::anyhow!("{}:{}: {}", path.display(), d.line, d.message))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn splitting(p_gamma: f64, delta: f64, target_rv: Option<f64>, budget: Option<f64>) -> Result<()> {
    let target = match (target_rv, budget) {
        (Some(rv), None) => SplittingTarget::RelativeVariance(rv),
        (None, Some(b)) => SplittingTarget::Budget(b),
        _ => unreachable!("clap enforces exactly one target"),
    };
    let b = splitting_bound(p_gamma, delta, target)?;
    println!("levels K = {}", b.levels);
    println!("particles N = {}", b.particles);
    match target {
        SplittingTarget::RelativeVariance(rv) => {
            println!("simulations >= {}", b.simulations);
            println!("relative variance = {rv} (100 RV = {:.2})", 100.0 * rv);
        }
        SplittingTarget::Budget(_) => {
            println!("simulations = {}", b.simulations);
            println!("relative variance >= {:.6} (100 RV >= {:.2})", b.relative_variance, 100.0 * b.relative_variance);
        }
    }
    Ok(())
}

fn gen_synthetic(size: usize, seed: u64, out: &Path, table: Option<&Path>) -> Result<()> {
    let spec = SyntheticSpec { n: size, seed, ..SyntheticSpec::default() };
    let pool = generate_pool(&spec)?;
    let values = ground_truth_values(&pool, &spec);
    let mut w = BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
    pool.write_csv(&mut w, Some(&values))?;
    w.flush()?;
    if let Some(path) = table {
        let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
        writeln!(w, "point_index,level,f")?;
        for (i, x) in pool.iter().enumerate() {
            for level in 0..2 {
                writeln!(w, "{i},{level},{}", spec.evaluate(x, i, level)?)?;
            }
        }
        w.flush()?;
    }
    let failures = values.iter().filter(|v| **v <= spec.gamma).count();
    println!("{size} points, {failures} failures at threshold {}", spec.gamma);
    Ok(())
}

fn score_report(pool: &Path, scores: &Path, threshold: f64, trials: Trials, out: &Path, label: &str) -> Result<()> {
    let file = File::open(pool).with_context(|| format!("opening {}", pool.display()))?;
    let (points, values) = EmbeddingPool::read_csv(BufReader::new(file)).with_context(|| format!("reading {}", pool.display()))?;
    let Some(values) = values else { bail!("{} has no truth_f_level0 column", pool.display()) };
    let truth: Vec<bool> = values.iter().map(|f| *f <= threshold).collect();
    let file = File::open(scores).with_context(|| format!("opening {}", scores.display()))?;
    let scores = read_score_csv(BufReader::new(file), points.len()).with_context(|| format!("reading {}", scores.display()))?;
    fs::create_dir_all(out)?;
    let curve = retention_recall_from_order(&scores.ranking(), &truth)?;
    let r = run::write_evaluation(out, label, &scores, &curve, &truth, trials)?;
    println!(
        "recall {:.4} +- {:.4}, 100 RV {:.4} +- {:.4} over {} trials",
        r.recall_mean,
        r.se_recall,
        100.0 * r.relative_variance,
        100.0 * r.se_relative_variance,
        r.trials
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = configure_threads().and_then(|()| match cli.command {
        Command::Run { config, seed, out } => load_config(&config, seed).and_then(|cfg| run::run(&cfg, &out)),
        Command::SplittingBound { p_gamma, delta, target_rv, budget } => splitting(p_gamma, delta, target_rv, budget),
        Command::GenSynthetic { size, seed, out, table } => gen_synthetic(size, seed, &out, table.as_deref()),
        Command::ScoreReport { pool, scores, threshold, draws_per_failure, trials, seed, out, label } => {
            score_report(&pool, &scores, threshold, Trials { draws_per_failure, count: trials, seed }, &out, &label)
        }
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
