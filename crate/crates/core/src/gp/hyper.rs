//! Kernel hyperparameters, their log-space packing and a flat text format.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;

use crate::error::{invalid, Error, Result};
use crate::pool::{EmbeddingPool, FidelityConfig};

/// Log-parameters are kept in this box so that training never produces
/// overflowing or vanishing positive values.
pub const LOG_PARAM_BOUND: f64 = 12.0;

/// Discrepancy kernel and observation noise of one cheap fidelity level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelParams {
    pub lengthscales: Vec<f64>,
    pub signal_var: f64,
    pub noise_var: f64,
}

/// Hyperparameters of the multifidelity kernel, in normalized target units.
///
/// `levels[l - 1]` holds the discrepancy parameters of fidelity `l`. The
/// jitter is added to every diagonal entry and is not trained.
#[derive(Debug, Clone, PartialEq)]
pub struct GpHyperparams {
    pub lengthscales: Vec<f64>,
    pub signal_var: f64,
    pub levels: Vec<LevelParams>,
    pub jitter: f64,
}

impl GpHyperparams {
    /// Starting point used before any training: per-dimension pool spread as
    /// lengthscales, unit base variance, small discrepancies.
    pub fn initial(pool: &EmbeddingPool, fid: &FidelityConfig) -> Self {
        let ls: Vec<f64> = pool.dim_variances().iter().map(|v| if *v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        let levels = (1..fid.levels())
            .map(|_| LevelParams { lengthscales: ls.clone(), signal_var: 0.1, noise_var: 0.01 })
            .collect();
        Self { lengthscales: ls, signal_var: 1.0, levels, jitter: 1e-6 }
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Number of fidelity levels including level 0.
    pub fn num_levels(&self) -> usize {
        self.levels.len() + 1
    }

    /// Observation noise variance of a level (level 0 is noiseless).
    pub fn noise(&self, level: usize) -> f64 {
        if level == 0 {
            0.0
        } else {
            self.levels[level - 1].noise_var
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengthscales.is_empty() {
            return Err(invalid("at least one lengthscale is required"));
        }
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !self.lengthscales.iter().all(|&v| pos(v)) || !pos(self.signal_var) || !pos(self.jitter) {
            return Err(invalid("base hyperparameters must be finite and positive"));
        }
        for (i, lp) in self.levels.iter().enumerate() {
            if lp.lengthscales.len() != self.dim() {
                return Err(invalid(format!("fidelity {} has {} lengthscales, expected {}", i + 1, lp.lengthscales.len(), self.dim())));
            }
            if !lp.lengthscales.iter().all(|&v| pos(v)) || !pos(lp.signal_var) || !pos(lp.noise_var) {
                return Err(invalid(format!("fidelity {} hyperparameters must be finite and positive", i + 1)));
            }
        }
        Ok(())
    }

    /// Number of trainable log-parameters.
    pub fn num_params(&self) -> usize {
        self.dim() + 1 + self.levels.len() * (self.dim() + 2)
    }

    /// Trainable parameters in log-space: base lengthscales, base variance,
    /// then per cheap level its lengthscales, variance and noise.
    pub fn to_log_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend(self.lengthscales.iter().map(|v| v.ln()));
        out.push(self.signal_var.ln());
        for lp in &self.levels {
            out.extend(lp.lengthscales.iter().map(|v| v.ln()));
            out.push(lp.signal_var.ln());
            out.push(lp.noise_var.ln());
        }
        out
    }

    /// Inverse of [`GpHyperparams::to_log_params`], keeping `self`'s shape and
    /// jitter. Values are clamped to `±LOG_PARAM_BOUND`.
    pub fn with_log_params(&self, theta: &[f64]) -> Self {
        assert_eq!(theta.len(), self.num_params(), "log-parameter length mismatch");
        let e = |v: f64| v.clamp(-LOG_PARAM_BOUND, LOG_PARAM_BOUND).exp();
        let d = self.dim();
        let mut it = theta.iter().copied();
        let mut take = |n: usize| -> Vec<f64> { (&mut it).take(n).map(e).collect() };
        let lengthscales = take(d);
        let signal_var = take(1)[0];
        let levels = (0..self.levels.len())
            .map(|_| {
                let lengthscales = take(d);
                let rest = take(2);
                LevelParams { lengthscales, signal_var: rest[0], noise_var: rest[1] }
            })
            .collect();
        Self { lengthscales, signal_var, levels, jitter: self.jitter }
    }

    /// Flat `key = value` text, one parameter per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (j, v) in self.lengthscales.iter().enumerate() {
            let _ = writeln!(s, "lengthscale.{j} = {v}");
        }
        let _ = writeln!(s, "signal_var = {}", self.signal_var);
        for (i, lp) in self.levels.iter().enumerate() {
            let l = i + 1;
            for (j, v) in lp.lengthscales.iter().enumerate() {
                let _ = writeln!(s, "fid{l}.lengthscale.{j} = {v}");
            }
            let _ = writeln!(s, "fid{l}.signal_var = {}", lp.signal_var);
            let _ = writeln!(s, "fid{l}.noise_var = {}", lp.noise_var);
        }
        let _ = writeln!(s, "jitter = {}", self.jitter);
        s
    }

    /// Parses [`GpHyperparams::to_text`] output. Blank lines and `#` comments
    /// are ignored; every key must appear exactly once.
    pub fn from_text<R: BufRead>(r: R) -> Result<Self> {
        let mut entries: BTreeMap<String, (usize, f64)> = BTreeMap::new();
        for (i, line) in r.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let (k, v) = t.split_once('=').ok_or_else(|| Error::Parse { line: line_no, message: "expected `key = value`".into() })?;
            let v: f64 = v.trim().parse().map_err(|_| Error::Parse { line: line_no, message: format!("bad number `{}`", v.trim()) })?;
            if entries.insert(k.trim().to_string(), (line_no, v)).is_some() {
                return Err(Error::Parse { line: line_no, message: format!("duplicate key `{}`", k.trim()) });
            }
        }
        let mut take = |key: &str| entries.remove(key).map(|(_, v)| v).ok_or_else(|| invalid(format!("missing hyperparameter `{key}`")));
        let mut lengthscales = Vec::new();
        while let Ok(v) = take(&format!("lengthscale.{}", lengthscales.len())) {
            lengthscales.push(v);
        }
        let signal_var = take("signal_var")?;
        let jitter = take("jitter")?;
        let mut levels = Vec::new();
        loop {
            let l = levels.len() + 1;
            let Ok(signal_var) = take(&format!("fid{l}.signal_var")) else { break };
            let noise_var = take(&format!("fid{l}.noise_var"))?;
            let lengthscales = (0..lengthscales.len()).map(|j| take(&format!("fid{l}.lengthscale.{j}"))).collect::<Result<Vec<_>>>()?;
            levels.push(LevelParams { lengthscales, signal_var, noise_var });
        }
        if let Some((key, (line, _))) = entries.into_iter().next() {
            return Err(Error::Parse { line, message: format!("unknown key `{key}`") });
        }
        let h = Self { lengthscales, signal_var, levels, jitter };
        h.validate()?;
        Ok(h)
    }
}
