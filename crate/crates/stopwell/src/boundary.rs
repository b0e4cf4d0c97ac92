//! Investment-boundary representation and the Monte-Carlo fixed-point
//! solver.
//!
//! A candidate boundary is a continuous decreasing function
//! `pi -> b(pi)` on [0, 1] with values in `[x*_1, x*_0]`, dominating the
//! analytic lower bound and pinned to `x*_1` at `pi = 1` (the class of
//! functions within which the boundary is the unique root of the
//! integral equation). Curves are stored as piecewise-linear functions on
//! a pi grid; after every stochastic update the iterate is projected back
//! into the class (clamp, pin endpoints, pool-adjacent-violators, floor
//! at the lower bound).
//!
//! The update operator maps a curve `b` to
//!
//! ```text
//! (Psi b)(pi) = b(pi) - E[ (X_xi - rI) 1{X_xi <= b(Pi_xi)} ] / (r c(pi))
//! ```
//!
//! with `(xi, X_xi, Pi_xi)` sampled exactly at an `Exp(r)` time starting
//! from `(b(pi), pi)` and `c(pi)` the perpetuity factor. The boundary is
//! its unique fixed point in the class. Common random numbers across
//! iterations make the iteration settle at an exact fixed point of the
//! empirical operator, so the stopping rule sees contraction rather than
//! resampling noise.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::closed_form::ClosedFormPack;
use crate::error::{Result, StopwellError};
use crate::mc::{parallel_estimate, McEstimate};
use crate::sampling::RngStream;

/// Monotone piecewise-linear candidate boundary on a pi grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCurve {
    pi_grid: Vec<f64>,
    values: Vec<f64>,
    uniform: bool,
}

impl BoundaryCurve {
    pub fn new(pi_grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if pi_grid.len() < 2 || pi_grid.len() != values.len() {
            return Err(StopwellError::InvalidInput(
                "boundary grid needs >= 2 nodes and matching value count".into(),
            ));
        }
        if pi_grid[0] != 0.0 || *pi_grid.last().unwrap() != 1.0 {
            return Err(StopwellError::InvalidInput("pi grid must span [0, 1]".into()));
        }
        if pi_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(StopwellError::InvalidInput("pi grid must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(StopwellError::InvalidInput("boundary values must be finite".into()));
        }
        let m = pi_grid.len();
        let h = 1.0 / (m - 1) as f64;
        let uniform = pi_grid
            .iter()
            .enumerate()
            .all(|(j, &p)| (p - j as f64 * h).abs() < 1e-12);
        Ok(BoundaryCurve { pi_grid, values, uniform })
    }

    /// Uniform grid of `m` nodes spanning [0, 1].
    pub fn uniform_grid(m: usize) -> Vec<f64> {
        let h = 1.0 / (m - 1) as f64;
        let mut g: Vec<f64> = (0..m).map(|j| j as f64 * h).collect();
        g[m - 1] = 1.0;
        g
    }

    /// The analytic lower bound sampled on a uniform grid — the natural
    /// initial iterate.
    pub fn from_lower_bound(pack: &ClosedFormPack, m: usize) -> Self {
        let grid = Self::uniform_grid(m);
        let values = grid.iter().map(|&p| pack.lower_bound_b(p)).collect();
        BoundaryCurve { pi_grid: grid, values, uniform: true }
    }

    pub fn pi_grid(&self) -> &[f64] {
        &self.pi_grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Linear interpolation; constant extrapolation outside [0, 1] is
    /// irrelevant since beliefs stay in the unit interval.
    #[inline]
    pub fn eval(&self, pi: f64) -> f64 {
        let m = self.pi_grid.len();
        if pi <= 0.0 {
            return self.values[0];
        }
        if pi >= 1.0 {
            return self.values[m - 1];
        }
        let j = if self.uniform {
            ((pi * (m - 1) as f64) as usize).min(m - 2)
        } else {
            match self.pi_grid.partition_point(|&p| p <= pi) {
                0 => 0,
                k => (k - 1).min(m - 2),
            }
        };
        let (p0, p1) = (self.pi_grid[j], self.pi_grid[j + 1]);
        let w = (pi - p0) / (p1 - p0);
        self.values[j] + w * (self.values[j + 1] - self.values[j])
    }

    /// Checks membership in the admissible class up to `tol`:
    /// non-increasing, within `[x*_1, x*_0]`, pinned at `x*_1` for
    /// `pi = 1`, and dominating the lower bound.
    pub fn is_in_class(&self, pack: &ClosedFormPack, tol: f64) -> bool {
        self.class_violation(pack) <= tol
    }

    /// Largest violation of the class constraints (0 for members).
    pub fn class_violation(&self, pack: &ClosedFormPack) -> f64 {
        let mut worst = (self.values.last().unwrap() - pack.xstar1).abs();
        for (j, (&p, &v)) in self.pi_grid.iter().zip(&self.values).enumerate() {
            worst = worst.max(pack.xstar1 - v).max(v - pack.xstar0);
            worst = worst.max(pack.lower_bound_b(p) - v);
            if j + 1 < self.values.len() {
                worst = worst.max(self.values[j + 1] - v);
            }
        }
        worst.max(0.0)
    }

    /// Max over interior adjacent node pairs of the decrement in excess of
    /// the local Lipschitz bound `(pi' - pi)(b(0) - b(1)) / (pi'(1 - pi))`.
    pub fn lipschitz_excess(&self) -> f64 {
        let b0 = self.values[0];
        let b1 = *self.values.last().unwrap();
        let mut worst: f64 = 0.0;
        for j in 0..self.values.len() - 1 {
            let (p, q) = (self.pi_grid[j], self.pi_grid[j + 1]);
            if q >= 1.0 {
                continue;
            }
            let bound = (q - p) * (b0 - b1) / (q * (1.0 - p));
            worst = worst.max((self.values[j] - self.values[j + 1]) - bound);
        }
        worst
    }
}

/// Decreasing isotonic projection by pool-adjacent-violators, equal
/// weights.
fn pava_decreasing(values: &mut [f64]) {
    let n = values.len();
    let mut level: Vec<f64> = Vec::with_capacity(n);
    let mut weight: Vec<f64> = Vec::with_capacity(n);
    for &v in values.iter() {
        level.push(v);
        weight.push(1.0);
        while level.len() > 1 && level[level.len() - 2] < level[level.len() - 1] {
            let (v2, w2) = (level.pop().unwrap(), weight.pop().unwrap());
            let (v1, w1) = (level.pop().unwrap(), weight.pop().unwrap());
            level.push((v1 * w1 + v2 * w2) / (w1 + w2));
            weight.push(w1 + w2);
        }
    }
    let mut pos = 0;
    for (v, w) in level.into_iter().zip(weight) {
        for _ in 0..w as usize {
            values[pos] = v;
            pos += 1;
        }
    }
}

/// Projects raw node values into the admissible class: clamp to
/// `[x*_1, x*_0]`, pin the endpoints to the known thresholds, restore
/// monotonicity, floor at the lower bound. The floor keeps monotonicity
/// (max of two decreasing functions) and the pins (the bound ends at the
/// thresholds), so the output is always a class member.
pub fn project_into_class(
    pack: &ClosedFormPack,
    pi_grid: &[f64],
    raw_values: &[f64],
) -> Result<BoundaryCurve> {
    let m = pi_grid.len();
    let mut v: Vec<f64> = raw_values
        .iter()
        .map(|&x| x.clamp(pack.xstar1, pack.xstar0))
        .collect();
    v[0] = pack.xstar0;
    v[m - 1] = pack.xstar1;
    pava_decreasing(&mut v);
    for (val, &p) in v.iter_mut().zip(pi_grid) {
        *val = val.max(pack.lower_bound_b(p));
    }
    BoundaryCurve::new(pi_grid.to_vec(), v)
}

/// Per-node outcome of one operator application.
#[derive(Debug, Clone, Copy)]
pub struct NodeUpdate {
    /// Raw (pre-projection) change of the node value.
    pub update: f64,
    /// Standard error of the change.
    pub std_error: f64,
}

/// Iteration diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationReport {
    pub iterations: usize,
    pub sup_change_history: Vec<f64>,
    /// Max over nodes of |node residual| per iteration, in value units.
    pub residual_history: Vec<f64>,
    pub samples_per_node: u64,
    pub converged: bool,
    /// Tolerance that was in force at the final iteration.
    pub tol: f64,
}

/// Discounted shortfall expectation
/// `E[(X_xi - rI) 1{X_xi <= curve(Pi_xi)}] / r` started from `(x0, pi0)`.
/// The belief at the exponential time is evaluated through the filter in
/// log space without leaving the log of the level. This integrand is
/// bounded (the indicator caps the level at `x*_0`), which keeps the
/// variance finite even when the discounted level itself has none.
pub(crate) fn shortfall_expectation(
    pack: &ClosedFormPack,
    curve: &BoundaryCurve,
    x0: f64,
    pi0: f64,
    n_samples: u64,
    stream: RngStream,
) -> McEstimate {
    let p = pack.params;
    let s2 = p.sigma * p.sigma;
    let k = (p.mu1 - p.mu0) / s2;
    let time_coef = 0.5 * (s2 - p.mu1 - p.mu0);
    let logit0 = if pi0 > 0.0 && pi0 < 1.0 { (pi0 / (1.0 - pi0)).ln() } else { f64::NAN };
    parallel_estimate(stream, n_samples, move |rng| {
        let theta = usize::from(rng.random::<f64>() < pi0);
        let xi = -(1.0 - rng.random::<f64>()).ln() / p.r;
        let z: f64 = rng.sample(StandardNormal);
        let log_growth = (p.drift(theta) - 0.5 * s2) * xi + p.sigma * xi.sqrt() * z;
        let x = x0 * log_growth.exp();
        let pi = if pi0 <= 0.0 {
            0.0
        } else if pi0 >= 1.0 {
            1.0
        } else {
            let zeta = logit0 + k * (log_growth + time_coef * xi);
            if zeta >= 0.0 {
                1.0 / (1.0 + (-zeta).exp())
            } else {
                let e = zeta.exp();
                e / (1.0 + e)
            }
        };
        if x <= curve.eval(pi) {
            (x - p.r * p.invest_cost) / p.r
        } else {
            0.0
        }
    })
}

/// One application of the update operator with projection.
///
/// Node `j` draws its samples from `stream.substream(j)`, so repeated
/// applications with the same stream use common random numbers. Errors
/// with [`StopwellError::EstimateDegenerate`] when a node's update is
/// larger than `min_resolvable` yet its standard error exceeds 10% of it
/// (undersampling); nodes with updates at or below `min_resolvable` are
/// exempt, since updates vanish at the fixed point while the noise floor
/// does not.
pub fn psi_apply(
    pack: &ClosedFormPack,
    curve: &BoundaryCurve,
    n_samples: u64,
    stream: RngStream,
    min_resolvable: Option<f64>,
) -> Result<(BoundaryCurve, Vec<NodeUpdate>)> {
    if n_samples < 10_000 {
        return Err(StopwellError::InvalidInput(format!(
            "operator evaluation needs >= 1e4 samples per node, got {n_samples}"
        )));
    }
    let floor = min_resolvable.unwrap_or(1e-3 * pack.xstar0);
    let p = pack.params;
    let m = curve.len();
    let mut raw = Vec::with_capacity(m);
    let mut updates = Vec::with_capacity(m);
    for j in 0..m {
        let pi = curve.pi_grid()[j];
        let x0 = curve.values()[j];
        let est = shortfall_expectation(pack, curve, x0, pi, n_samples, stream.substream(j as u64));
        let c = p.perpetuity_factor(pi);
        let update = -est.mean / c;
        let se = est.std_error / c;
        if update.abs() > floor && se > 0.1 * update.abs() {
            return Err(StopwellError::EstimateDegenerate { pi, se, update });
        }
        raw.push(x0 + update);
        updates.push(NodeUpdate { update, std_error: se });
    }
    let projected = project_into_class(pack, curve.pi_grid(), &raw)?;
    Ok((projected, updates))
}

/// Integral-equation residual at one belief level: the discounted
/// expected shortfall integral started at `(curve(pi), pi)`, which is
/// zero at the true boundary. Value units; reported with its standard
/// error.
pub fn integral_residual(
    pack: &ClosedFormPack,
    curve: &BoundaryCurve,
    pi: f64,
    n_samples: u64,
    stream: RngStream,
) -> McEstimate {
    shortfall_expectation(pack, curve, curve.eval(pi), pi, n_samples, stream)
}

/// Runs the fixed-point iteration to convergence.
///
/// The stopping rule estimates the geometric tail of the iteration: with
/// per-iteration contraction ratio `rho` estimated from the recent
/// sup-change history, it stops once both the last sup change and the
/// projected remaining drift `change * rho / (1 - rho)` fall below the
/// tolerance. Stopping on the raw sup change alone under-converges, since
/// a tolerance-sized step can hide a remaining drift many times larger
/// when `rho` is close to one.
///
/// `tol = None` uses `max(0.1% of x*_0, 2 * max node SE)`; the tolerance
/// cannot usefully be below the Monte-Carlo noise floor.
pub fn fixed_point_solve(
    pack: &ClosedFormPack,
    init: &BoundaryCurve,
    tol: Option<f64>,
    max_iter: usize,
    n_samples: u64,
    stream: RngStream,
) -> Result<(BoundaryCurve, IterationReport)> {
    const MIN_ITERS: usize = 8;
    let mut curve = project_into_class(pack, init.pi_grid(), init.values())?;
    let mut sup_change_history = Vec::new();
    let mut residual_history = Vec::new();
    let mut tol_eff = tol.unwrap_or(1e-3 * pack.xstar0);
    for it in 0..max_iter {
        let (next, updates) = psi_apply(pack, &curve, n_samples, stream, Some(tol_eff))?;
        let change = curve
            .values()
            .iter()
            .zip(next.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let max_se = updates.iter().map(|u| u.std_error).fold(0.0, f64::max);
        let max_residual = updates
            .iter()
            .zip(curve.pi_grid())
            .map(|(u, &p)| (u.update * pack.params.perpetuity_factor(p)).abs())
            .fold(0.0, f64::max);
        sup_change_history.push(change);
        residual_history.push(max_residual);
        curve = next;
        if tol.is_none() {
            tol_eff = (1e-3 * pack.xstar0).max(2.0 * max_se);
        }
        if change == 0.0 && it + 1 >= MIN_ITERS {
            return Ok((
                curve,
                IterationReport {
                    iterations: it + 1,
                    sup_change_history,
                    residual_history,
                    samples_per_node: n_samples,
                    converged: true,
                    tol: tol_eff,
                },
            ));
        }
        if it + 1 >= MIN_ITERS && change < tol_eff {
            let h = &sup_change_history;
            let mut ratios: Vec<f64> = h
                .windows(2)
                .rev()
                .take(3)
                .filter(|w| w[0] > 0.0)
                .map(|w| (w[1] / w[0]).clamp(0.0, 0.995))
                .collect();
            ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let rho = ratios.get(ratios.len() / 2).copied().unwrap_or(0.0);
            let remaining = change * rho / (1.0 - rho);
            if remaining < tol_eff {
                return Ok((
                    curve,
                    IterationReport {
                        iterations: it + 1,
                        sup_change_history,
                        residual_history,
                        samples_per_node: n_samples,
                        converged: true,
                        tol: tol_eff,
                    },
                ));
            }
        }
    }
    Err(StopwellError::NonConvergence {
        max_iter,
        last_change: sup_change_history.last().copied().unwrap_or(f64::NAN),
    })
}
