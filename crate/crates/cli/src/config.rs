//! Run configuration: a sectioned TOML file with line-numbered diagnostics.
//!
//! ```toml
//! [pool]
//! kind = "synthetic"     # or "csv" with `path`
//! size = 20000
//! threshold = 0.56
//!
//! [fidelity]
//! costs = [1.0, 0.15625]
//!
//! [method]
//! name = "bams"          # bas | mc | mc-gp | mcm-gp | ce | external-scores
//!
//! [budget]
//! initial = 20
//! per_batch = 15
//! batches = 3
//!
//! [is]
//! alpha = 2.5
//! draws_per_failure = 5.0
//! trials = 200
//!
//! [seeds]
//! seed = 0
//!
//! [oracle]
//! kind = "synthetic"     # csv with `path`, or external with `command`/`args`
//! ```

use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;
use toml::Spanned;

/// A configuration problem at a 1-based line of the file.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for Diagnostic {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Bams,
    Bas,
    Mc,
    McGp,
    McmGp,
    Ce,
    ExternalScores,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Bams => "bams",
            Method::Bas => "bas",
            Method::Mc => "mc",
            Method::McGp => "mc-gp",
            Method::McmGp => "mcm-gp",
            Method::Ce => "ce",
            Method::ExternalScores => "external-scores",
        }
    }

    /// Whether the method queries cheap fidelity levels.
    pub fn multifidelity(self) -> bool {
        matches!(self, Method::Bams | Method::McmGp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolKind {
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleKind {
    Synthetic,
    Csv,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BudgetRuleName {
    Strict,
    Inclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergeKeyName {
    CostNormalized,
    Raw,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    pool: Spanned<RawPool>,
    #[serde(default)]
    fidelity: Option<RawFidelity>,
    method: Spanned<RawMethod>,
    #[serde(default)]
    budget: Option<RawBudget>,
    #[serde(default, rename = "is")]
    sampling: Option<RawSampling>,
    #[serde(default)]
    seeds: Option<RawSeeds>,
    #[serde(default)]
    oracle: Option<Spanned<RawOracle>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPool {
    kind: PoolKind,
    path: Option<Spanned<String>>,
    size: Option<Spanned<i64>>,
    threshold: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFidelity {
    costs: Spanned<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMethod {
    name: Method,
    clusters: Option<Spanned<i64>>,
    initial_clusters: Option<Spanned<i64>>,
    overbudget: Option<Spanned<f64>>,
    budget_rule: Option<BudgetRuleName>,
    merge_key: Option<MergeKeyName>,
    scores: Option<Spanned<String>>,
    train_iters: Option<Spanned<i64>>,
    learning_rate: Option<Spanned<f64>>,
    ce_elites: Option<Spanned<i64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBudget {
    initial: Option<Spanned<f64>>,
    per_batch: Option<Spanned<f64>>,
    batches: Option<Spanned<i64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSampling {
    alpha: Option<Spanned<f64>>,
    draws_per_failure: Option<Spanned<f64>>,
    trials: Option<Spanned<i64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSeeds {
    seed: Option<Spanned<i64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOracle {
    kind: OracleKind,
    path: Option<Spanned<String>>,
    command: Option<Spanned<String>>,
    #[serde(default)]
    args: Vec<String>,
    timeout_secs: Option<Spanned<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PoolSource {
    Synthetic { size: usize },
    Csv(PathBuf),
}

/// Where simulator values come from.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleBinding {
    Synthetic,
    Csv(PathBuf),
    External { command: String, args: Vec<String>, timeout: Duration },
}

/// A validated configuration. Relative paths are resolved against the
/// configuration file's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub pool: PoolSource,
    /// Failure threshold; `None` means the synthetic default.
    pub threshold: Option<f64>,
    pub costs: Vec<f64>,
    pub method: Method,
    pub clusters: usize,
    pub initial_clusters: usize,
    pub overbudget: f64,
    pub budget_rule: BudgetRuleName,
    pub merge_key: MergeKeyName,
    pub scores: Option<PathBuf>,
    pub train_iters: usize,
    pub learning_rate: f64,
    pub ce_elites: usize,
    pub initial_budget: f64,
    pub batch_budget: f64,
    pub batches: usize,
    pub alpha: f64,
    pub draws_per_failure: f64,
    pub trials: usize,
    pub seed: u64,
    pub oracle: OracleBinding,
}

struct Ctx<'a> {
    src: &'a str,
    base: &'a Path,
}

impl Ctx<'_> {
    fn line(&self, span: Range<usize>) -> usize {
        1 + self.src[..span.start.min(self.src.len())].bytes().filter(|b| *b == b'\n').count()
    }

    fn err<T>(&self, span: Range<usize>, message: impl Into<String>) -> Result<T, Diagnostic> {
        Err(Diagnostic { line: self.line(span), message: message.into() })
    }

    fn count(&self, v: &Option<Spanned<i64>>, key: &str, default: usize, min: i64) -> Result<usize, Diagnostic> {
        match v {
            None => Ok(default),
            Some(s) if *s.get_ref() >= min => Ok(*s.get_ref() as usize),
            Some(s) => self.err(s.span(), format!("`{key}` must be at least {min}, got {}", s.get_ref())),
        }
    }

    fn positive(&self, v: &Option<Spanned<f64>>, key: &str, default: f64) -> Result<f64, Diagnostic> {
        match v {
            None => Ok(default),
            Some(s) if *s.get_ref() > 0.0 && s.get_ref().is_finite() => Ok(*s.get_ref()),
            Some(s) => self.err(s.span(), format!("`{key}` must be positive and finite, got {}", s.get_ref())),
        }
    }

    fn path(&self, v: &Spanned<String>) -> PathBuf {
        self.base.join(v.get_ref())
    }
}

/// Level-1 cost used when the file has no `[fidelity]` section.
pub const DEFAULT_CHEAP_COST: f64 = 5.0 / 32.0;

impl Config {
    /// Parses and validates configuration text. `base` anchors relative paths.
    pub fn parse(src: &str, base: &Path) -> Result<Self, Diagnostic> {
        let ctx = Ctx { src, base };
        let raw: RawConfig = toml::from_str(src).map_err(|e| Diagnostic {
            line: e.span().map(|s| ctx.line(s)).unwrap_or(1),
            message: e.message().trim().to_string(),
        })?;

        let pool_span = raw.pool.span();
        let pool = raw.pool.into_inner();
        let pool_source = match pool.kind {
            PoolKind::Synthetic => {
                if let Some(p) = &pool.path {
                    return ctx.err(p.span(), "`path` is only used with kind = \"csv\"");
                }
                PoolSource::Synthetic { size: ctx.count(&pool.size, "size", 20_000, 1)? }
            }
            PoolKind::Csv => match &pool.path {
                Some(p) => PoolSource::Csv(ctx.path(p)),
                None => return ctx.err(pool_span, "[pool] kind = \"csv\" needs `path`"),
            },
        };
        if pool.threshold.is_none() && matches!(pool_source, PoolSource::Csv(_)) {
            return ctx.err(pool_span, "[pool] `threshold` is required for csv pools");
        }

        let costs = match &raw.fidelity {
            None => vec![1.0, DEFAULT_CHEAP_COST],
            Some(f) => {
                let c = f.costs.get_ref();
                let span = f.costs.span();
                match c.first() {
                    None => return ctx.err(span, "`costs` needs at least the level-0 cost"),
                    Some(&c0) if c0 != 1.0 => return ctx.err(span, format!("level-0 cost must be exactly 1, got {c0}")),
                    _ => {}
                }
                if let Some((l, v)) = c.iter().enumerate().skip(1).find(|(_, v)| !(**v > 0.0 && **v <= 1.0)) {
                    return ctx.err(span, format!("level-{l} cost must lie in (0, 1], got {v}"));
                }
                if let Some(l) = c.iter().skip(1).position(|v| *v == 1.0) {
                    return ctx.err(span, format!("level-{} cost equals the level-0 cost; cheap levels must cost less than 1", l + 1));
                }
                c.clone()
            }
        };

        let method_span = raw.method.span();
        let m = raw.method.into_inner();
        let clusters = ctx.count(&m.clusters, "clusters", 6, 1)?;
        let initial_clusters = ctx.count(&m.initial_clusters, "initial_clusters", 2 * clusters, 1)?;
        if initial_clusters < clusters {
            let span = m.initial_clusters.as_ref().map(|s| s.span()).unwrap_or(method_span.clone());
            return ctx.err(span, format!("`initial_clusters` ({initial_clusters}) must be at least `clusters` ({clusters})"));
        }
        let overbudget = ctx.positive(&m.overbudget, "overbudget", 2.0)?;
        if overbudget < 1.0 {
            return ctx.err(m.overbudget.as_ref().expect("explicit value").span(), format!("`overbudget` must be at least 1, got {overbudget}"));
        }
        let scores = m.scores.as_ref().map(|s| ctx.path(s));
        if m.name == Method::ExternalScores && scores.is_none() {
            return ctx.err(method_span, "method `external-scores` needs `scores`");
        }
        let train_iters = ctx.count(&m.train_iters, "train_iters", 200, 0)?;
        let learning_rate = ctx.positive(&m.learning_rate, "learning_rate", 0.05)?;
        let ce_elites = ctx.count(&m.ce_elites, "ce_elites", 5, 1)?;

        let b = raw.budget.unwrap_or(RawBudget { initial: None, per_batch: None, batches: None });
        let initial_budget = ctx.positive(&b.initial, "initial", 20.0)?;
        let batch_budget = ctx.positive(&b.per_batch, "per_batch", 15.0)?;
        let batches = ctx.count(&b.batches, "batches", 3, 1)?;

        let s = raw.sampling.unwrap_or(RawSampling { alpha: None, draws_per_failure: None, trials: None });
        let alpha = ctx.positive(&s.alpha, "alpha", 2.5)?;
        let draws_per_failure = ctx.positive(&s.draws_per_failure, "draws_per_failure", 5.0)?;
        let trials = ctx.count(&s.trials, "trials", 200, 2)?;

        let seed = match raw.seeds.and_then(|s| s.seed) {
            None => 0,
            Some(s) if *s.get_ref() >= 0 => *s.get_ref() as u64,
            Some(s) => return ctx.err(s.span(), "`seed` must be non-negative"),
        };

        let oracle = match raw.oracle {
            None => match pool_source {
                PoolSource::Synthetic { .. } => OracleBinding::Synthetic,
                PoolSource::Csv(_) => return ctx.err(pool_span, "csv pools need an [oracle] section"),
            },
            Some(o) => {
                let span = o.span();
                let o = o.into_inner();
                match o.kind {
                    OracleKind::Synthetic => {
                        if !matches!(pool_source, PoolSource::Synthetic { .. }) {
                            return ctx.err(span, "the synthetic oracle needs a synthetic pool");
                        }
                        OracleBinding::Synthetic
                    }
                    OracleKind::Csv => match &o.path {
                        Some(p) => OracleBinding::Csv(ctx.path(p)),
                        None => return ctx.err(span, "[oracle] kind = \"csv\" needs `path`"),
                    },
                    OracleKind::External => match &o.command {
                        Some(c) => OracleBinding::External {
                            command: c.get_ref().clone(),
                            args: o.args.clone(),
                            timeout: Duration::from_secs_f64(ctx.positive(&o.timeout_secs, "timeout_secs", 300.0)?),
                        },
                        None => return ctx.err(span, "[oracle] kind = \"external\" needs `command`"),
                    },
                }
            }
        };
        if oracle == OracleBinding::Synthetic && costs.len() > 2 {
            return ctx.err(pool_span, format!("the synthetic simulator has 2 fidelity levels, {} costs given", costs.len()));
        }

        Ok(Config {
            pool: pool_source,
            threshold: pool.threshold,
            costs,
            method: m.name,
            clusters,
            initial_clusters,
            overbudget,
            budget_rule: m.budget_rule.unwrap_or(BudgetRuleName::Strict),
            merge_key: m.merge_key.unwrap_or(MergeKeyName::CostNormalized),
            scores,
            train_iters,
            learning_rate,
            ce_elites,
            initial_budget,
            batch_budget,
            batches,
            alpha,
            draws_per_failure,
            trials,
            seed,
            oracle,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(src: &str) -> Result<Config, Diagnostic> {
        Config::parse(src, Path::new("/cfg"))
    }

    const MINIMAL: &str = "[pool]\nkind = \"synthetic\"\n\n[method]\nname = \"bams\"\n";

    #[test]
    fn defaults() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(c.pool, PoolSource::Synthetic { size: 20_000 });
        assert_eq!(c.costs, vec![1.0, 0.15625]);
        assert_eq!((c.clusters, c.initial_clusters, c.trials, c.seed), (6, 12, 200, 0));
        assert_eq!((c.alpha, c.draws_per_failure, c.overbudget), (2.5, 5.0, 2.0));
        assert_eq!((c.initial_budget, c.batch_budget, c.batches), (20.0, 15.0, 3));
        assert_eq!(c.oracle, OracleBinding::Synthetic);
        assert_eq!(c.budget_rule, BudgetRuleName::Strict);
    }

    #[test]
    fn cost_checks_name_the_line() {
        let bad0 = format!("{MINIMAL}\n[fidelity]\ncosts = [0.5, 0.1]\n");
        let e = parse(&bad0).unwrap_err();
        assert_eq!(e.line, 8);
        assert!(e.message.contains("exactly 1"), "{e}");
        for costs in ["[1.0, 0.0]", "[1.0, 1.5]", "[1.0, -0.2]", "[1.0, 1.0]"] {
            let e = parse(&format!("{MINIMAL}[fidelity]\ncosts = {costs}\n")).unwrap_err();
            assert_eq!(e.line, 7, "{costs}: {e}");
        }
    }

    #[test]
    fn syntax_and_type_errors_have_lines() {
        let e = parse("[pool]\nkind = \"synthetic\"\n[method]\nname = \"bams\"\nclusters = \"six\"\n").unwrap_err();
        assert_eq!(e.line, 5);
        let e = parse("[pool]\nkind = \"synthetic\"\n[method]\nname = \"magic\"\n").unwrap_err();
        assert_eq!(e.line, 4);
        let e = parse("[pool]\nkind = \"synthetic\"\nbogus = 1\n[method]\nname = \"bams\"\n").unwrap_err();
        assert_eq!(e.line, 3);
        let e = parse("[pool\n").unwrap_err();
        assert_eq!(e.line, 1);
    }

    #[test]
    fn range_checks() {
        let e = parse(&format!("{MINIMAL}clusters = 0\n")).unwrap_err();
        assert_eq!(e.line, 6);
        let e = parse(&format!("{MINIMAL}clusters = 4\ninitial_clusters = 3\n")).unwrap_err();
        assert_eq!(e.line, 7);
        let e = parse(&format!("{MINIMAL}overbudget = 0.5\n")).unwrap_err();
        assert_eq!(e.line, 6);
        let e = parse(&format!("{MINIMAL}[budget]\nper_batch = -1\n")).unwrap_err();
        assert_eq!(e.line, 7);
    }

    #[test]
    fn bindings_and_paths() {
        let src = "[pool]\nkind = \"csv\"\npath = \"p.csv\"\nthreshold = 0.5\n[method]\nname = \"external-scores\"\nscores = \"s.csv\"\n[oracle]\nkind = \"external\"\ncommand = \"sim\"\nargs = [\"-q\"]\ntimeout_secs = 5\n";
        let c = parse(src).unwrap();
        assert_eq!(c.pool, PoolSource::Csv(PathBuf::from("/cfg/p.csv")));
        assert_eq!(c.scores, Some(PathBuf::from("/cfg/s.csv")));
        assert_eq!(
            c.oracle,
            OracleBinding::External { command: "sim".into(), args: vec!["-q".into()], timeout: Duration::from_secs(5) }
        );
        let e = parse("[pool]\nkind = \"csv\"\npath = \"p.csv\"\nthreshold = 0.5\n[method]\nname = \"bams\"\n").unwrap_err();
        assert!(e.message.contains("[oracle]"));
        let e = parse("[pool]\nkind = \"synthetic\"\n[method]\nname = \"external-scores\"\n").unwrap_err();
        assert_eq!(e.line, 3);
    }
}
