//! Fast evaluation of the forward point variance as a function of the
//! residual variance fraction, for one fixed standardized margin.
//!
//! With `b(tau) = Phi2(s, -s, tau - 1)`, differentiating in `tau` and
//! substituting `tau = u^2` gives
//!
//! ```text
//! b(tau) = 1/pi * integral_0^sqrt(tau) exp(-s^2 / (2 - u^2)) / sqrt(2 - u^2) du
//! ```
//!
//! whose integrand is smooth on `[0, 1]`. It is stored as a piecewise
//! Chebyshev antiderivative, so a query costs one square root and a short
//! Clenshaw recurrence instead of a bivariate normal quadrature.

use std::f64::consts::PI;

const PIECES: usize = 4;
/// Nodes used to fit the integrand on each piece.
const NODES: usize = 18;
/// Coefficients of the integrated series on each piece.
const COEFS: usize = NODES + 1;

#[inline]
fn integrand(s2: f64, u: f64) -> f64 {
    let w = 2.0 - u * u;
    (-s2 / w).exp() / w.sqrt()
}

#[derive(Debug, Clone)]
pub(crate) struct BetaCurve {
    coefs: [[f64; COEFS]; PIECES],
    offsets: [f64; PIECES],
}

impl BetaCurve {
    pub(crate) fn new(s: f64) -> Self {
        let s2 = s * s;
        let mut coefs = [[0.0; COEFS]; PIECES];
        let mut offsets = [0.0; PIECES];
        let half = 0.5 / PIECES as f64;
        let mut acc = 0.0;
        for (k, piece) in coefs.iter_mut().enumerate() {
            let mid = (k as f64 + 0.5) / PIECES as f64;
            let vals: Vec<f64> = (0..NODES)
                .map(|j| {
                    let x = (PI * (j as f64 + 0.5) / NODES as f64).cos();
                    integrand(s2, mid + half * x)
                })
                .collect();
            let mut c = [0.0; NODES + 1];
            for (m, cm) in c.iter_mut().enumerate().take(NODES) {
                let sum: f64 = vals
                    .iter()
                    .enumerate()
                    .map(|(j, v)| v * (PI * m as f64 * (j as f64 + 0.5) / NODES as f64).cos())
                    .sum();
                *cm = 2.0 * sum / NODES as f64;
            }
            // c[0] holds twice the constant term, as the integration rule expects
            for m in 1..COEFS {
                let prev = c[m - 1];
                let next = if m < NODES { c[m + 1] } else { 0.0 };
                piece[m] = half * (prev - next) / (2.0 * m as f64) / PI;
            }
            let at_minus_one: f64 = (1..COEFS).map(|m| if m % 2 == 0 { piece[m] } else { -piece[m] }).sum();
            piece[0] = -at_minus_one;
            offsets[k] = acc;
            acc += piece.iter().sum::<f64>();
        }
        Self { coefs, offsets }
    }

    /// `Phi2(s, -s, tau - 1)` for `tau` in `[0, 1]` (clamped).
    #[inline]
    pub(crate) fn eval(&self, tau: f64) -> f64 {
        if tau <= 0.0 {
            return 0.0;
        }
        let v = tau.min(1.0).sqrt() * PIECES as f64;
        let k = (v as usize).min(PIECES - 1);
        let x = 2.0 * (v - k as f64) - 1.0;
        let c = &self.coefs[k];
        let (mut b1, mut b2) = (0.0, 0.0);
        for m in (1..COEFS).rev() {
            let b0 = c[m] + 2.0 * x * b1 - b2;
            b2 = b1;
            b1 = b0;
        }
        (self.offsets[k] + c[0] + x * b1 - b2).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normal::{bvn_lower, std_normal_cdf};

    #[test]
    fn matches_bivariate_cdf() {
        let mut worst: f64 = 0.0;
        for i in 0..=80 {
            let s = -8.5 + i as f64 * 0.2125;
            let c = BetaCurve::new(s);
            for j in 0..=200 {
                let tau = (j as f64 / 200.0).powi(2);
                let exact = bvn_lower(s, -s, tau - 1.0);
                worst = worst.max((c.eval(tau) - exact).abs());
            }
        }
        assert!(worst < 1e-13, "worst error {worst:e}");
    }

    #[test]
    fn endpoints() {
        for s in [-3.0, -0.4, 0.0, 1.1, 5.0] {
            let c = BetaCurve::new(s);
            assert_eq!(c.eval(0.0), 0.0);
            let h = std_normal_cdf(s) * std_normal_cdf(-s);
            assert!((c.eval(1.0) - h).abs() < 1e-14, "s = {s}");
        }
        assert!((BetaCurve::new(0.0).eval(1.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn monotone_in_tau() {
        let c = BetaCurve::new(0.7);
        let mut prev = 0.0;
        for j in 0..=1000 {
            let v = c.eval(j as f64 / 1000.0);
            assert!(v + 1e-16 >= prev);
            prev = v;
        }
    }
}
