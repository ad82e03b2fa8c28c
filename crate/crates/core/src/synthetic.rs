//! Two-diamond synthetic benchmark with a noisy cheap fidelity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::pool::{EmbeddingPool, FidelityConfig};

/// Parameters of the benchmark. Failures are the two diamonds `f <= gamma`
/// centred at `(+-center, center)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub center: f64,
    pub gamma: f64,
    pub noise_std: f64,
    pub cheap_cost: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { n: 20_000, center: 1.95, gamma: 0.56, noise_std: 0.1, cheap_cost: 0.10, seed: 0 }
    }
}

impl SyntheticSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("synthetic pool size must be positive"));
        }
        if !(self.noise_std >= 0.0) || !self.center.is_finite() || !self.gamma.is_finite() {
            return Err(invalid("synthetic parameters must be finite, noise non-negative"));
        }
        FidelityConfig::new(vec![1.0, self.cheap_cost]).map(|_| ())
    }

    /// Level 0 at cost 1 and the noisy level 1.
    pub fn fidelity(&self) -> FidelityConfig {
        FidelityConfig::new(vec![1.0, self.cheap_cost]).expect("validated cheap cost")
    }

    /// Noise-free objective.
    pub fn objective(&self, x: &[f64]) -> f64 {
        (x[0].abs() - self.center).abs() + (x[1] - self.center).abs()
    }

    /// Level-1 noise for a point: a fixed function of `(point_index, seed)`.
    pub fn cheap_noise(&self, point_index: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_0fc0_ffee);
        rng.set_stream(point_index as u64);
        self.noise_std * rng.sample::<f64, _>(StandardNormal)
    }

    /// Simulator output at a level (0 exact, 1 noisy).
    pub fn evaluate(&self, x: &[f64], point_index: usize, level: usize) -> Result<f64> {
        match level {
            0 => Ok(self.objective(x)),
            1 => Ok(self.objective(x) + self.cheap_noise(point_index)),
            _ => Err(invalid(format!("synthetic benchmark has no level {level}"))),
        }
    }
}

/// `n` standard-normal points in two dimensions.
pub fn generate_pool(spec: &SyntheticSpec) -> Result<EmbeddingPool> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let data = (0..2 * spec.n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    EmbeddingPool::from_flat(2, data)
}

/// Level-0 objective at every pool point.
pub fn ground_truth_values(pool: &EmbeddingPool, spec: &SyntheticSpec) -> Vec<f64> {
    pool.iter().map(|x| spec.objective(x)).collect()
}

/// Failure indicator `f(x) <= gamma` at every pool point.
pub fn ground_truth_labels(pool: &EmbeddingPool, spec: &SyntheticSpec) -> Vec<bool> {
    pool.iter().map(|x| spec.objective(x) <= spec.gamma).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn objective_values() {
        let s = SyntheticSpec::default();
        assert_eq!(s.objective(&[1.95, 1.95]), 0.0);
        assert_eq!(s.objective(&[-1.95, 1.95]), 0.0);
        assert!((s.objective(&[0.0, 0.0]) - 3.9).abs() < 1e-15);
        assert!(s.evaluate(&[0.0, 0.0], 0, 2).is_err());
    }

    #[test]
    fn pool_statistics_and_rate() {
        let s = SyntheticSpec::with_seed(3);
        let pool = generate_pool(&s).unwrap();
        assert_eq!(pool.len(), 20_000);
        for d in 0..2 {
            let m: f64 = pool.iter().map(|p| p[d]).sum::<f64>() / 20_000.0;
            assert!(m.abs() < 3.0 / (20_000f64).sqrt());
        }
        let rate = ground_truth_labels(&pool, &s).iter().filter(|b| **b).count() as f64 / 20_000.0;
        assert!((0.004..=0.006).contains(&rate), "rate {rate}");
        assert_eq!(generate_pool(&s).unwrap(), pool);
    }

    #[test]
    fn cheap_noise_is_deterministic_with_right_spread() {
        let s = SyntheticSpec::with_seed(1);
        assert_eq!(s.cheap_noise(17), s.cheap_noise(17));
        let r: Vec<f64> = (0..10_000).map(|i| s.evaluate(&[0.3, 0.2], i, 1).unwrap() - s.objective(&[0.3, 0.2])).collect();
        let m = r.iter().sum::<f64>() / 1e4;
        let sd = (r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 1e4).sqrt();
        assert!(m.abs() < 3.0 * 0.1 / 100.0);
        assert!((0.095..=0.105).contains(&sd));
    }

    #[test]
    fn labels_mirror_symmetric() {
        let s = SyntheticSpec::default();
        for (x, y) in [(1.9, 1.8), (0.3, 2.0), (1.5, 1.95), (2.4, 1.7)] {
            assert_eq!(s.objective(&[x, y]) <= s.gamma, s.objective(&[-x, y]) <= s.gamma);
        }
    }
}
