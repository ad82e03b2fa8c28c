//! Simulator backends: the synthetic benchmark, a precomputed table, and an
//! external process speaking a line protocol.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use crate::error::{invalid, Error, Result};
use crate::pool::{AugmentedInput, EmbeddingPool};
use crate::synthetic::SyntheticSpec;

/// Evaluates the simulator at an augmented input.
pub trait Oracle: Sync {
    fn evaluate(&self, input: AugmentedInput) -> Result<f64>;

    /// Evaluates in order and stops at the first failure.
    fn evaluate_batch(&self, inputs: &[AugmentedInput]) -> Result<Vec<f64>> {
        inputs.iter().map(|&x| self.evaluate(x)).collect()
    }
}

fn checked(input: AugmentedInput, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Oracle { input, message: format!("non-finite value {v}") })
    }
}

/// The synthetic benchmark over a pool generated from it.
#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    spec: SyntheticSpec,
    pool: Arc<EmbeddingPool>,
}

impl SyntheticOracle {
    pub fn new(spec: SyntheticSpec, pool: Arc<EmbeddingPool>) -> Result<Self> {
        spec.validate()?;
        if pool.dim() != 2 {
            return Err(invalid("synthetic oracle needs a two-dimensional pool"));
        }
        Ok(Self { spec, pool })
    }
}

impl Oracle for SyntheticOracle {
    fn evaluate(&self, input: AugmentedInput) -> Result<f64> {
        if input.point_index >= self.pool.len() {
            return Err(Error::Oracle { input, message: "point index outside the pool".into() });
        }
        self.spec
            .evaluate(self.pool.point(input.point_index), input.point_index, input.level)
            .map_err(|e| Error::Oracle { input, message: e.to_string() })
    }
}

/// Values looked up from a `point_index,level,f` table.
#[derive(Debug, Clone, Default)]
pub struct TableOracle {
    values: HashMap<AugmentedInput, f64>,
}

impl TableOracle {
    pub fn from_values(values: HashMap<AugmentedInput, f64>) -> Self {
        Self { values }
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut values = HashMap::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let ln = i + 1;
            if i == 0 || line.trim().is_empty() {
                if i == 0 && line.trim() != "point_index,level,f" {
                    return Err(Error::Parse { line: 1, message: "expected header `point_index,level,f`".into() });
                }
                continue;
            }
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            if parts.len() != 3 {
                return Err(Error::Parse { line: ln, message: format!("expected 3 fields, found {}", parts.len()) });
            }
            let parse_err = |what: &str| Error::Parse { line: ln, message: format!("bad {what}") };
            let idx: usize = parts[0].parse().map_err(|_| parse_err("point_index"))?;
            let lvl: usize = parts[1].parse().map_err(|_| parse_err("level"))?;
            let f: f64 = parts[2].parse().map_err(|_| parse_err("f"))?;
            if !f.is_finite() {
                return Err(parse_err("f (non-finite)"));
            }
            if values.insert(AugmentedInput::new(idx, lvl), f).is_some() {
                return Err(Error::Parse { line: ln, message: format!("duplicate entry ({idx}, {lvl})") });
            }
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl Oracle for TableOracle {
    fn evaluate(&self, input: AugmentedInput) -> Result<f64> {
        match self.values.get(&input) {
            Some(&v) => Ok(v),
            None => Err(Error::Oracle { input, message: "no tabulated value".into() }),
        }
    }
}

struct ChildIo {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

/// A long-lived child process. Each request is one line `EVAL <point_index>
/// <level>`; the reply is `OK <value>` or `ERR <message>`. Requests are
/// serialized.
pub struct ExternalOracle {
    io: Mutex<ChildIo>,
    timeout: Duration,
}

impl ExternalOracle {
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(300);

    pub fn spawn(program: &str, args: &[String], timeout: Duration) -> Result<Self> {
        let mut child = Command::new(program).args(args).stdin(Stdio::piped()).stdout(Stdio::piped()).spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self { io: Mutex::new(ChildIo { child, stdin, lines: rx }), timeout })
    }

    fn exited(io: &mut ChildIo, input: AugmentedInput) -> Error {
        // give a closing child a moment to be reaped
        let mut status = None;
        for _ in 0..50 {
            if let Ok(Some(s)) = io.child.try_wait() {
                status = Some(s.to_string());
                break;
            }
            thread::sleep(Duration::from_millis(10));
        }
        Error::OracleExited { input, status: status.unwrap_or_else(|| "output closed".into()) }
    }
}

impl Oracle for ExternalOracle {
    fn evaluate(&self, input: AugmentedInput) -> Result<f64> {
        let mut guard = self.io.lock().map_err(|_| Error::Oracle { input, message: "oracle lock poisoned".into() })?;
        let io = &mut *guard;
        let sent = writeln!(io.stdin, "EVAL {} {}", input.point_index, input.level).and_then(|_| io.stdin.flush());
        if sent.is_err() {
            return Err(Self::exited(io, input));
        }
        let line = match io.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(Error::Oracle { input, message: format!("read failed: {e}") }),
            Err(RecvTimeoutError::Timeout) => {
                return Err(Error::OracleTimeout { input, seconds: self.timeout.as_secs_f64() })
            }
            Err(RecvTimeoutError::Disconnected) => return Err(Self::exited(io, input)),
        };
        let reply = line.trim();
        if let Some(rest) = reply.strip_prefix("OK ") {
            match rest.trim().parse::<f64>() {
                Ok(v) => checked(input, v),
                Err(_) => Err(Error::OracleProtocol { input, response: reply.to_string() }),
            }
        } else if let Some(msg) = reply.strip_prefix("ERR") {
            Err(Error::Oracle { input, message: msg.trim().to_string() })
        } else {
            Err(Error::OracleProtocol { input, response: reply.to_string() })
        }
    }
}

impl Drop for ExternalOracle {
    fn drop(&mut self) {
        if let Ok(io) = self.io.get_mut() {
            let _ = io.child.kill();
            let _ = io.child.wait();
        }
    }
}
