//! Record of simulator evaluations.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use crate::error::{invalid, Error, Result};
use crate::pool::AugmentedInput;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub input: AugmentedInput,
    pub value: f64,
    pub batch: usize,
}

/// Evaluations in the order they were made. Each augmented input appears at
/// most once.
#[derive(Debug, Clone, Default)]
pub struct EvaluationLog {
    records: Vec<EvalRecord>,
    seen: HashSet<AugmentedInput>,
}

impl EvaluationLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, input: AugmentedInput, value: f64, batch: usize) -> Result<()> {
        if !value.is_finite() {
            return Err(invalid(format!("non-finite observation at {input}")));
        }
        if !self.seen.insert(input) {
            return Err(invalid(format!("augmented input {input} was already evaluated")));
        }
        self.records.push(EvalRecord { input, value, batch });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EvalRecord] {
        &self.records
    }

    pub fn contains(&self, input: AugmentedInput) -> bool {
        self.seen.contains(&input)
    }

    pub fn inputs(&self) -> impl Iterator<Item = AugmentedInput> + '_ {
        self.records.iter().map(|r| r.input)
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.value)
    }

    /// Mean and population standard deviation of the observed values; the
    /// deviation falls back to 1 when the values are (numerically) constant.
    pub fn normalization(&self) -> (f64, f64) {
        if self.records.is_empty() {
            return (0.0, 1.0);
        }
        let n = self.records.len() as f64;
        let mean = self.values().sum::<f64>() / n;
        let var = self.values().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        let scale = mean.abs().max(1.0);
        (mean, if std > 1e-12 * scale { std } else { 1.0 })
    }

    /// Writes `point_index,level,f,batch` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "point_index,level,f,batch")?;
        for r in &self.records {
            writeln!(w, "{},{},{},{}", r.input.point_index, r.input.level, r.value, r.batch)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut log = Self::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let line_no = i + 1;
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let perr = |m: String| Error::Parse { line: line_no, message: m };
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 4 {
                return Err(perr(format!("expected 4 fields, got {}", f.len())));
            }
            let p: usize = f[0].parse().map_err(|_| perr(format!("bad point index `{}`", f[0])))?;
            let l: usize = f[1].parse().map_err(|_| perr(format!("bad level `{}`", f[1])))?;
            let v: f64 = f[2].parse().map_err(|_| perr(format!("bad value `{}`", f[2])))?;
            let b: usize = f[3].parse().map_err(|_| perr(format!("bad batch `{}`", f[3])))?;
            log.push(AugmentedInput::new(p, l), v, b).map_err(|e| perr(e.to_string()))?;
        }
        Ok(log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_rejected() {
        let mut log = EvaluationLog::new();
        log.push(AugmentedInput::new(3, 0), 1.0, 0).unwrap();
        log.push(AugmentedInput::new(3, 1), 1.1, 0).unwrap();
        assert!(log.push(AugmentedInput::new(3, 0), 2.0, 1).is_err());
        assert!(log.push(AugmentedInput::new(4, 0), f64::NAN, 1).is_err());
        assert_eq!(log.len(), 2);
    }

    #[test]
    fn normalization_values() {
        let mut log = EvaluationLog::new();
        assert_eq!(log.normalization(), (0.0, 1.0));
        log.push(AugmentedInput::new(0, 0), 2.0, 0).unwrap();
        assert_eq!(log.normalization(), (2.0, 1.0));
        log.push(AugmentedInput::new(1, 0), 4.0, 0).unwrap();
        assert_eq!(log.normalization(), (3.0, 1.0));
        log.push(AugmentedInput::new(2, 0), 6.0, 0).unwrap();
        let (m, s) = log.normalization();
        assert_eq!(m, 4.0);
        assert!((s - (8.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn csv_round_trip() {
        let mut log = EvaluationLog::new();
        log.push(AugmentedInput::new(7, 1), -0.25, 2).unwrap();
        log.push(AugmentedInput::new(1, 0), 3.5, 2).unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "point_index,level,f,batch\n7,1,-0.25,2\n1,0,3.5,2\n");
        let back = EvaluationLog::read_csv(&buf[..]).unwrap();
        assert_eq!(back.records(), log.records());
    }
}
