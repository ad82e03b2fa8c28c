//! Greedy cost-normalized selection with rank-one recursive updates.
//!
//! After `q` picks the pending covariance is represented by factor vectors
//! `v_1..v_q` with `cov(a, X_q) cov(X_q, X_q)^{-1} cov(X_q, b) = sum_j v_j(a) v_j(b)`.
//! Adding a pick `y` with residual variance `h` (noise included) appends
//! `v(a) = R(a, y) / sqrt(h)` where `R` is the residual covariance given the
//! current prefix. A dense target-by-candidate residual block is kept so that
//! each step costs `O(|T| |C|)` rather than a refactorization.

use std::collections::HashSet;
use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::acquisition::curve::BetaCurve;
use crate::acquisition::{COST_EPS, TAU_SNAP};
use crate::error::{invalid, Error, Result};
use crate::estimator::standardized_margin;
use crate::gp::PosteriorState;
use crate::normal::std_normal_cdf;
use crate::pool::{AugmentedInput, FidelityConfig};

/// Targets whose forward variance drops below this are dropped for good; the
/// forward variance never increases under further conditioning.
const BETA_ACTIVE: f64 = 1e-15;
/// A (target, candidate) pair is skipped when its change in forward variance
/// is provably below this.
const PAIR_TOL: f64 = 1e-14;
/// Candidates whose residual variance falls below this fraction of the signal
/// variance are fully determined by the pending set.
const H_FLOOR_REL: f64 = 1e-12;

/// One greedy pick: the input, its change in the cluster objective, its cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub input: AugmentedInput,
    pub delta_j: f64,
    pub cost: f64,
}

/// Incremental state of the greedy selection over one target/candidate set.
#[derive(Debug)]
pub struct GreedySelector<'a> {
    state: &'a PosteriorState,
    costs: Vec<f64>,
    n_targets: usize,
    h_floor: f64,

    targets: Vec<AugmentedInput>,
    t_var: Vec<f64>,
    t_resid: Vec<f64>,
    t_tau: Vec<f64>,
    t_beta: Vec<f64>,
    t_amp: Vec<f64>,
    t_curve: Vec<BetaCurve>,
    t_alive: Vec<bool>,
    t_factors: Vec<Vec<f64>>,

    cands: Vec<AugmentedInput>,
    c_alive: Vec<bool>,
    c_h: Vec<f64>,
    c_inv_h: Vec<f64>,
    c_whitened: DMatrix<f64>,
    c_factors: Vec<Vec<f64>>,

    /// Residual covariance, row per active target, column per candidate.
    resid: Vec<f64>,
    /// Rank-one update not yet applied to `resid`.
    deferred: Option<(Vec<f64>, Vec<f64>)>,
    picks: Vec<Selection>,
}

impl<'a> GreedySelector<'a> {
    /// `candidates` must be distinct and unevaluated; `targets` are the points
    /// whose forward variance is averaged (normally level-0 inputs).
    pub fn new(state: &'a PosteriorState, candidates: &[AugmentedInput], targets: &[AugmentedInput], fid: &FidelityConfig) -> Result<Self> {
        if targets.is_empty() {
            return Err(invalid("selection needs at least one target"));
        }
        if fid.levels() != state.hyper().num_levels() {
            return Err(invalid("fidelity levels do not match the posterior"));
        }
        let evaluated: HashSet<AugmentedInput> = state.inputs().iter().copied().collect();
        let mut cands = candidates.to_vec();
        cands.sort_unstable();
        if cands.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("candidates must be distinct"));
        }
        for y in cands.iter().chain(targets) {
            if y.point_index >= state.pool().len() || y.level >= fid.levels() {
                return Err(invalid(format!("input {y} out of bounds")));
            }
        }
        if let Some(y) = cands.iter().find(|y| evaluated.contains(y)) {
            return Err(invalid(format!("candidate {y} was already evaluated")));
        }

        let g = state.gamma_normalized();
        let (t_mean, t_var_all) = state.normalized_mean_var(targets);
        let mut active = Vec::new();
        let (mut t_var, mut t_amp, mut t_curve, mut t_beta) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (i, t) in targets.iter().enumerate() {
            let Some(s) = standardized_margin(g, t_mean[i], t_var_all[i]) else { continue };
            if std_normal_cdf(s) * std_normal_cdf(-s) < BETA_ACTIVE {
                continue;
            }
            let curve = BetaCurve::new(s);
            active.push(*t);
            t_var.push(t_var_all[i]);
            t_amp.push((-0.5 * s * s).exp() / PI);
            t_beta.push(curve.eval(1.0));
            t_curve.push(curve);
        }
        let nt = active.len();

        let c_whitened = state.whiten(&cands);
        let (_, c_var) = state.mean_var_from_whitened(&cands, &c_whitened);
        let c_h: Vec<f64> = cands.iter().zip(&c_var).map(|(y, v)| v + state.hyper().noise(y.level)).collect();
        let h_floor = H_FLOOR_REL * state.hyper().signal_var;
        let c_inv_h = c_h.iter().map(|&h| if h >= h_floor { 1.0 / h } else { 0.0 }).collect();

        // column t of (W_C^T W_T) is contiguous over candidates: row-major by target
        let t_whitened = state.whiten(&active);
        let nc = cands.len();
        let mut resid: Vec<f64> = if state.num_observations() == 0 {
            vec![0.0; nc * nt]
        } else {
            (c_whitened.transpose() * t_whitened).data.into()
        };
        for (ti, t) in active.iter().enumerate() {
            let row = &mut resid[ti * nc..(ti + 1) * nc];
            for (r, c) in row.iter_mut().zip(&cands) {
                *r = state.prior_cov(*t, *c) - *r;
            }
        }

        Ok(Self {
            state,
            costs: fid.costs().to_vec(),
            n_targets: targets.len(),
            h_floor,
            t_resid: t_var.clone(),
            t_tau: vec![1.0; nt],
            t_alive: vec![true; nt],
            targets: active,
            t_var,
            t_beta,
            t_amp,
            t_curve,
            t_factors: Vec::new(),
            c_alive: vec![true; nc],
            cands,
            c_h,
            c_inv_h,
            c_whitened,
            c_factors: Vec::new(),
            resid,
            deferred: None,
            picks: Vec::new(),
        })
    }

    /// Picks made so far, in order.
    pub fn picks(&self) -> &[Selection] {
        &self.picks
    }

    /// Current objective: mean forward variance over all targets.
    pub fn current_j(&self) -> f64 {
        let s: f64 = self.t_beta.iter().zip(&self.t_alive).filter(|(_, a)| **a).map(|(b, _)| b).sum();
        s / self.n_targets as f64
    }

    /// `cov(t, X_q) cov(X_q, X_q)^{-1} cov(X_q, c)` for the current prefix, if
    /// `t` is a tracked target and `c` a candidate.
    pub fn projected_cov(&self, t: AugmentedInput, c: AugmentedInput) -> Option<f64> {
        let ti = self.targets.iter().position(|x| *x == t)?;
        let ci = self.cands.binary_search(&c).ok()?;
        Some(self.t_factors.iter().zip(&self.c_factors).map(|(vt, vc)| vt[ti] * vc[ci]).sum())
    }

    /// Change in the objective from adding each candidate, in candidate
    /// order; also applies any deferred rank-one update.
    fn score_all(&mut self) -> Vec<f64> {
        let nc = self.cands.len();
        let mut dj = vec![0.0; nc];
        let deferred = self.deferred.take();
        for ti in 0..self.targets.len() {
            if !self.t_alive[ti] {
                continue;
            }
            let row = &mut self.resid[ti * nc..(ti + 1) * nc];
            if let Some((vt, vc)) = &deferred {
                let a = vt[ti];
                if a != 0.0 {
                    for (r, v) in row.iter_mut().zip(vc) {
                        *r -= a * v;
                    }
                }
            }
            let tau = self.t_tau[ti];
            let inv_var = 1.0 / self.t_var[ti];
            let beta = self.t_beta[ti];
            let curve = &self.t_curve[ti];
            // |d beta| <= amp * delta / sqrt(tau) with delta = R^2 / (h var)
            let thr = PAIR_TOL * tau.sqrt() / (self.t_amp[ti] * inv_var);
            for ((r, ih), d) in row.iter().zip(&self.c_inv_h).zip(dj.iter_mut()) {
                let q = r * r * ih;
                if q < thr {
                    continue;
                }
                let mut tn = tau - q * inv_var;
                if tn < TAU_SNAP {
                    tn = 0.0;
                }
                *d += curve.eval(tn) - beta;
            }
        }
        let n = self.n_targets as f64;
        dj.iter_mut().for_each(|d| *d = (*d / n).min(0.0));
        dj
    }

    /// Chooses the candidate minimizing `delta_j / cost`, ties going to the
    /// lowest point index then level, and conditions on it.
    pub fn select_next(&mut self) -> Result<Selection> {
        let dj = self.score_all();
        let mut best: Option<(usize, f64)> = None;
        for (ci, y) in self.cands.iter().enumerate() {
            if !self.c_alive[ci] || self.c_h[ci] < self.h_floor {
                continue;
            }
            let obj = dj[ci] / self.costs[y.level];
            if best.is_none_or(|(_, b)| obj < b) {
                best = Some((ci, obj));
            }
        }
        let (ci, _) = best.ok_or(Error::EmptySelection)?;
        let sel = Selection { input: self.cands[ci], delta_j: dj[ci], cost: self.costs[self.cands[ci].level] };
        self.commit(ci);
        self.picks.push(sel);
        Ok(sel)
    }

    fn commit(&mut self, q: usize) {
        debug_assert!(self.deferred.is_none(), "residuals must be current");
        let nc = self.cands.len();
        let sq = self.c_h[q].sqrt();
        let yq = self.cands[q];
        let wq = self.c_whitened.column(q);
        let mut vc = vec![0.0; nc];
        for (ci, c) in self.cands.iter().enumerate() {
            let mut r = self.state.prior_cov(*c, yq) - self.c_whitened.column(ci).dot(&wq);
            for f in &self.c_factors {
                r -= f[ci] * f[q];
            }
            vc[ci] = r / sq;
        }
        let mut vt = vec![0.0; self.targets.len()];
        for ti in 0..self.targets.len() {
            if !self.t_alive[ti] {
                continue;
            }
            vt[ti] = self.resid[ti * nc + q] / sq;
            self.t_resid[ti] -= vt[ti] * vt[ti];
            let mut tau = (self.t_resid[ti] / self.t_var[ti]).clamp(0.0, 1.0);
            if tau < TAU_SNAP {
                tau = 0.0;
            }
            self.t_tau[ti] = tau;
            self.t_beta[ti] = self.t_curve[ti].eval(tau);
            if self.t_beta[ti] < BETA_ACTIVE {
                self.t_alive[ti] = false;
            }
        }
        for ci in 0..nc {
            self.c_h[ci] -= vc[ci] * vc[ci];
            self.c_inv_h[ci] = if self.c_alive[ci] && self.c_h[ci] >= self.h_floor { 1.0 / self.c_h[ci] } else { 0.0 };
        }
        self.c_alive[q] = false;
        self.c_inv_h[q] = 0.0;
        self.t_factors.push(vt.clone());
        self.c_factors.push(vc.clone());
        self.deferred = Some((vt, vc));
    }
}

/// Single greedy step from an empty pending set.
pub fn select_next(state: &PosteriorState, candidates: &[AugmentedInput], targets: &[AugmentedInput], fid: &FidelityConfig) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::EmptySelection);
    }
    GreedySelector::new(state, candidates, targets, fid)?.select_next()
}

/// Greedy picks until the accumulated cost reaches `budget` or no candidate
/// remains selectable.
pub fn select_batch(
    state: &PosteriorState,
    candidates: &[AugmentedInput],
    targets: &[AugmentedInput],
    fid: &FidelityConfig,
    budget: f64,
) -> Result<Vec<Selection>> {
    if !(budget > 0.0) {
        return Err(invalid("selection budget must be positive"));
    }
    if candidates.is_empty() {
        return Err(Error::EmptySelection);
    }
    let mut sel = GreedySelector::new(state, candidates, targets, fid)?;
    let mut spent = 0.0;
    while spent < budget - COST_EPS {
        match sel.select_next() {
            Ok(s) => spent += s.cost,
            Err(Error::EmptySelection) if !sel.picks().is_empty() => break,
            Err(e) => return Err(e),
        }
    }
    Ok(sel.picks().to_vec())
}
