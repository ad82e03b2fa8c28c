//! Matérn-5/2 ARD kernel and the additive multifidelity kernel built from it.

use crate::error::{invalid, Result};
use crate::gp::hyper::GpHyperparams;
use crate::pool::{AugmentedInput, EmbeddingPool};

const SQRT5: f64 = 2.236_067_977_499_79;

/// Matérn-5/2 correlation as a function of the scaled distance `r`.
#[inline]
pub fn matern52_profile(r: f64) -> f64 {
    let a = SQRT5 * r;
    (1.0 + a + a * a / 3.0) * (-a).exp()
}

/// Squared Euclidean distance after dividing each coordinate difference by
/// its lengthscale.
#[inline]
pub fn scaled_sq_dist(x: &[f64], y: &[f64], lengthscales: &[f64]) -> f64 {
    x.iter().zip(y).zip(lengthscales).map(|((a, b), l)| ((a - b) / l).powi(2)).sum()
}

/// Unchecked ARD Matérn-5/2 value.
#[inline]
pub fn matern52(x: &[f64], y: &[f64], lengthscales: &[f64], signal_var: f64) -> f64 {
    signal_var * matern52_profile(scaled_sq_dist(x, y, lengthscales).sqrt())
}

/// Base (level-0) Matérn-5/2 kernel between two points.
pub fn matern25_kernel(x: &[f64], x2: &[f64], hyper: &GpHyperparams) -> Result<f64> {
    if x.len() != hyper.dim() || x2.len() != hyper.dim() {
        return Err(invalid(format!(
            "kernel inputs have dimensions {} and {} but {} lengthscales are set",
            x.len(),
            x2.len(),
            hyper.dim()
        )));
    }
    Ok(matern52(x, x2, &hyper.lengthscales, hyper.signal_var))
}

/// Noise-free covariance of the augmented model: the base kernel plus the
/// level's discrepancy kernel when both inputs share a nonzero level.
#[inline]
pub fn latent_cov(pool: &EmbeddingPool, a: AugmentedInput, b: AugmentedInput, hyper: &GpHyperparams) -> f64 {
    let (x, y) = (pool.point(a.point_index), pool.point(b.point_index));
    let mut k = matern52(x, y, &hyper.lengthscales, hyper.signal_var);
    if a.level == b.level && a.level > 0 {
        let lp = &hyper.levels[a.level - 1];
        k += matern52(x, y, &lp.lengthscales, lp.signal_var);
    }
    k
}

/// Observation covariance between two augmented inputs: [`latent_cov`] plus
/// the level's white noise and the jitter when the inputs are identical.
pub fn multifidelity_kernel(a: AugmentedInput, b: AugmentedInput, pool: &EmbeddingPool, hyper: &GpHyperparams) -> Result<f64> {
    for y in [a, b] {
        if y.point_index >= pool.len() || y.level >= hyper.num_levels() {
            return Err(invalid(format!("augmented input {y} out of bounds")));
        }
    }
    if pool.dim() != hyper.dim() {
        return Err(invalid("pool dimension does not match hyperparameters"));
    }
    let mut k = latent_cov(pool, a, b, hyper);
    if a == b {
        k += hyper.noise(a.level) + hyper.jitter;
    }
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::hyper::LevelParams;

    fn hyper() -> GpHyperparams {
        GpHyperparams {
            lengthscales: vec![0.7, 1.3],
            signal_var: 1.0,
            levels: vec![LevelParams { lengthscales: vec![0.4, 0.9], signal_var: 0.3, noise_var: 0.02 }],
            jitter: 1e-6,
        }
    }

    #[test]
    fn matern_reference_values() {
        let h = GpHyperparams { lengthscales: vec![1.0], signal_var: 1.0, levels: vec![], jitter: 1e-6 };
        assert_eq!(matern25_kernel(&[0.3], &[0.3], &h).unwrap(), 1.0);
        // (1 + sqrt5 + 5/3) exp(-sqrt5)
        let v = matern25_kernel(&[0.0], &[1.0], &h).unwrap();
        assert!((v - 0.523_994_108_831_820_3).abs() < 1e-15, "{v}");
        assert!(matern25_kernel(&[0.0], &[50.0], &h).unwrap() < 1e-12);
        assert!(matern25_kernel(&[0.0, 1.0], &[1.0], &h).is_err());
    }

    #[test]
    fn ard_scaling() {
        let h = hyper();
        let v = matern25_kernel(&[0.0, 0.0], &[0.7, 0.0], &h).unwrap();
        assert!((v - matern52_profile(1.0)).abs() < 1e-15);
    }

    #[test]
    fn multifidelity_cases() {
        let pool = EmbeddingPool::new(vec![vec![0.1, 0.2], vec![0.5, -0.3]]).unwrap();
        let h = hyper();
        let kxx = matern52(pool.point(0), pool.point(0), &h.lengthscales, h.signal_var);
        let a0 = AugmentedInput::new(0, 0);
        let a1 = AugmentedInput::new(0, 1);
        assert_eq!(multifidelity_kernel(a0, a1, &pool, &h).unwrap(), kxx);
        let diag = multifidelity_kernel(a1, a1, &pool, &h).unwrap();
        assert!((diag - (kxx + 0.3 + 0.02 + 1e-6)).abs() < 1e-15);
        let b1 = AugmentedInput::new(1, 1);
        let cross = multifidelity_kernel(a1, b1, &pool, &h).unwrap();
        let base = matern25_kernel(pool.point(0), pool.point(1), &h).unwrap();
        let disc = matern52(pool.point(0), pool.point(1), &[0.4, 0.9], 0.3);
        assert!((cross - (base + disc)).abs() < 1e-15);
        assert!(multifidelity_kernel(AugmentedInput::new(2, 0), a0, &pool, &h).is_err());
    }
}
