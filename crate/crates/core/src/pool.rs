//! Candidate pool, fidelity levels and augmented inputs.

use std::fmt;
use std::io::{BufRead, Write};

use crate::error::{invalid, Error, Result};

/// The `N` candidate embedding points that make up the empirical distribution.
///
/// Points are stored row-major; the id of a point is its row index.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPool {
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingPool {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = points.first().map(Vec::len).ok_or_else(|| invalid("pool must contain at least one point"))?;
        if dim == 0 {
            return Err(invalid("pool points must have dimension >= 1"));
        }
        let mut data = Vec::with_capacity(points.len() * dim);
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(invalid(format!("point {i} has dimension {} but expected {dim}", p.len())));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("point {i} has a non-finite coordinate")));
            }
            data.extend_from_slice(p);
        }
        Ok(Self { dim, data })
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(invalid("flat pool data must be a nonempty multiple of dim"));
        }
        Ok(Self { dim, data })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// Per-dimension population variance of the pool.
    pub fn dim_variances(&self) -> Vec<f64> {
        let n = self.len() as f64;
        let mut mean = vec![0.0; self.dim];
        for p in self.iter() {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; self.dim];
        for p in self.iter() {
            for ((s, v), m) in var.iter_mut().zip(p).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        var
    }

    /// Writes `index,x0,..,x{d-1}` rows, with an extra `truth_f_level0` column when given.
    pub fn write_csv<W: Write>(&self, mut w: W, truth: Option<&[f64]>) -> Result<()> {
        write!(w, "index")?;
        for j in 0..self.dim {
            write!(w, ",x{j}")?;
        }
        if truth.is_some() {
            write!(w, ",truth_f_level0")?;
        }
        writeln!(w)?;
        for (i, p) in self.iter().enumerate() {
            write!(w, "{i}")?;
            for v in p {
                write!(w, ",{v}")?;
            }
            if let Some(t) = truth {
                write!(w, ",{}", t[i])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Reads the layout produced by [`EmbeddingPool::write_csv`]. Rows must be
    /// listed in index order. Returns the optional truth column as well.
    pub fn read_csv<R: BufRead>(r: R) -> Result<(Self, Option<Vec<f64>>)> {
        let mut lines = r.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::Parse { line: 1, message: "empty pool file".into() })?;
        let header = header?;
        let cols: Vec<&str> = header.trim().split(',').map(str::trim).collect();
        if cols.first() != Some(&"index") {
            return Err(Error::Parse { line: 1, message: "first column must be `index`".into() });
        }
        let has_truth = cols.last() == Some(&"truth_f_level0");
        let dim = cols.len() - 1 - usize::from(has_truth);
        if dim == 0 {
            return Err(Error::Parse { line: 1, message: "no coordinate columns".into() });
        }
        let mut data = Vec::new();
        let mut truth = Vec::new();
        let mut expected = 0usize;
        for (ln, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let line_no = ln + 1;
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != cols.len() {
                return Err(Error::Parse { line: line_no, message: format!("expected {} fields, got {}", cols.len(), fields.len()) });
            }
            let idx: usize = fields[0]
                .parse()
                .map_err(|_| Error::Parse { line: line_no, message: format!("bad index `{}`", fields[0]) })?;
            if idx != expected {
                return Err(Error::Parse { line: line_no, message: format!("expected index {expected}, got {idx}") });
            }
            expected += 1;
            for f in &fields[1..] {
                let v: f64 = f.parse().map_err(|_| Error::Parse { line: line_no, message: format!("bad number `{f}`") })?;
                data.push(v);
            }
            if has_truth {
                truth.push(data.pop().expect("truth column present"));
            }
        }
        if expected == 0 {
            return Err(Error::Parse { line: 1, message: "pool file has no rows".into() });
        }
        Ok((Self::from_flat(dim, data)?, has_truth.then_some(truth)))
    }
}

/// Evaluation costs per fidelity level; level 0 is the ground-truth simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct FidelityConfig {
    costs: Vec<f64>,
}

impl FidelityConfig {
    pub fn new(costs: Vec<f64>) -> Result<Self> {
        match costs.first() {
            None => return Err(invalid("at least one fidelity level is required")),
            Some(&c) if c != 1.0 => return Err(invalid(format!("level 0 cost must be exactly 1, got {c}"))),
            _ => {}
        }
        for (l, &c) in costs.iter().enumerate().skip(1) {
            if !(c > 0.0 && c < 1.0) {
                return Err(invalid(format!("level {l} cost must lie in (0, 1), got {c}")));
            }
        }
        Ok(Self { costs })
    }

    pub fn single() -> Self {
        Self { costs: vec![1.0] }
    }

    /// Number of levels, `L + 1`.
    pub fn levels(&self) -> usize {
        self.costs.len()
    }

    pub fn cost(&self, level: usize) -> f64 {
        self.costs[level]
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }
}

/// A (point, fidelity level) pair.
///
/// The derived ordering (point index first, then level) is the tie-break order
/// used everywhere a deterministic choice between equal scores is needed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AugmentedInput {
    pub point_index: usize,
    pub level: usize,
}

impl AugmentedInput {
    pub fn new(point_index: usize, level: usize) -> Self {
        Self { point_index, level }
    }

    pub fn check(&self, pool: &EmbeddingPool, fid: &FidelityConfig) -> Result<()> {
        if self.point_index >= pool.len() || self.level >= fid.levels() {
            return Err(invalid(format!("augmented input {self} out of bounds")));
        }
        Ok(())
    }
}

impl fmt::Display for AugmentedInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.point_index, self.level)
    }
}
