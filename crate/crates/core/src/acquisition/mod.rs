//! Forward-looking point variance, the acquisition objective built from it,
//! and cost-normalized greedy selection.

mod curve;
mod select;

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{invalid, Error, Result};
use crate::estimator::standardized_margin;
use crate::gp::PosteriorState;
use crate::normal::bvn_lower;
use crate::pool::AugmentedInput;

pub use select::{select_batch, select_next, GreedySelector, Selection};

/// Residual variance fractions below this are treated as exactly zero.
pub const TAU_SNAP: f64 = 1e-12;

/// Tolerance used whenever accumulated costs are compared with budgets.
pub const COST_EPS: f64 = 1e-9;

/// Hypothetical future evaluations `X_m`, with the Cholesky factor of their
/// posterior covariance plus observation noise.
#[derive(Debug, Clone)]
pub struct PendingSet {
    inputs: Vec<AugmentedInput>,
    chol: Option<Cholesky<f64, Dyn>>,
}

impl PendingSet {
    pub fn empty() -> Self {
        Self { inputs: Vec::new(), chol: None }
    }

    pub fn new(state: &PosteriorState, inputs: Vec<AugmentedInput>) -> Result<Self> {
        let mut sorted = inputs.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("pending inputs must be distinct"));
        }
        for y in &inputs {
            if y.point_index >= state.pool().len() || y.level >= state.hyper().num_levels() {
                return Err(invalid(format!("pending input {y} out of bounds")));
            }
        }
        if inputs.is_empty() {
            return Ok(Self::empty());
        }
        let mut m = state.normalized_cross_cov(&inputs, &inputs);
        for (i, y) in inputs.iter().enumerate() {
            m[(i, i)] += state.hyper().noise(y.level);
        }
        // a tiny ridge only if the pending points are exactly degenerate
        let mut ridge = 0.0;
        let chol = loop {
            let mut a = m.clone();
            for i in 0..inputs.len() {
                a[(i, i)] += ridge;
            }
            if let Some(c) = Cholesky::new(a) {
                break c;
            }
            ridge = if ridge == 0.0 { 1e-12 * state.hyper().signal_var } else { ridge * 10.0 };
            if ridge > 1e-6 * state.hyper().signal_var {
                return Err(Error::NumericalFailure("pending covariance is singular".into()));
            }
        };
        Ok(Self { inputs, chol: Some(chol) })
    }

    pub fn inputs(&self) -> &[AugmentedInput] {
        &self.inputs
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// `cov(x, X_m) cov(X_m, X_m)^{-1} cov(X_m, x)` for each query, given the
    /// `|X_m| x |queries|` block of posterior cross-covariances.
    fn explained(&self, cross: DMatrix<f64>) -> Vec<f64> {
        match &self.chol {
            None => vec![0.0; cross.ncols()],
            Some(c) => {
                let mut z = cross;
                c.l_dirty().solve_lower_triangular_mut(&mut z);
                z.column_iter().map(|col| col.norm_squared()).collect()
            }
        }
    }
}

/// Forward point variances `beta(x; X_m)` of several inputs.
pub fn forward_point_variances(state: &PosteriorState, xs: &[AugmentedInput], pending: &PendingSet) -> Vec<f64> {
    let g = state.gamma_normalized();
    let (means, vars) = state.normalized_mean_var(xs);
    let explained = if pending.is_empty() {
        vec![0.0; xs.len()]
    } else {
        pending.explained(state.normalized_cross_cov(pending.inputs(), xs))
    };
    (0..xs.len())
        .map(|i| {
            let Some(s) = standardized_margin(g, means[i], vars[i]) else { return 0.0 };
            let mut tau = (1.0 - explained[i] / vars[i]).clamp(0.0, 1.0);
            if tau < TAU_SNAP {
                tau = 0.0;
            }
            bvn_lower(s, -s, tau - 1.0)
        })
        .collect()
}

/// Expected point variance at `x` after hypothetically observing `X_m`.
pub fn forward_point_variance(state: &PosteriorState, x: AugmentedInput, pending: &PendingSet) -> f64 {
    forward_point_variances(state, &[x], pending)[0]
}

/// Mean forward point variance over the targets.
pub fn acquisition_j(state: &PosteriorState, pending: &PendingSet, targets: &[AugmentedInput]) -> Result<f64> {
    if targets.is_empty() {
        return Err(invalid("acquisition needs at least one target"));
    }
    Ok(forward_point_variances(state, targets, pending).iter().sum::<f64>() / targets.len() as f64)
}
