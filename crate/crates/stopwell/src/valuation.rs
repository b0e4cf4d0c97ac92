//! Value estimation and the value of information.
//!
//! The value of following a boundary curve is estimated through the
//! discounted shortfall identity
//!
//! ```text
//! V(x, pi) = g(x, pi) - E[ (X_xi - rI) 1{X_xi <= curve(Pi_xi)} ] / r
//! ```
//!
//! whose integrand is bounded (the complementary indicator
//! `1{X_xi >= curve}` keeps the unbounded tail of the level and has
//! infinite variance whenever `2 mu_i + sigma^2 > r`, which holds for
//! typical parameter sets). A second, representation-free estimator
//! simulates paths and stops them at the curve; the two agreeing is the
//! module's main self-check.
//!
//! The value of information compares against the agent who learns the
//! drift at time zero: `Delta = (1-pi) V(x,0) + pi V(x,1) - V(x,pi)`,
//! zero beyond the uninformed boundary at `pi = 0` and humped between
//! the informed thresholds.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::boundary::{shortfall_expectation, BoundaryCurve};
use crate::closed_form::ClosedFormPack;
use crate::error::{Result, StopwellError};
pub use crate::mc::McEstimate;
use crate::mc::parallel_estimate;
use crate::model::{payoff_g, State};
use crate::sampling::RngStream;

/// Value of the stopping rule "invest once profits reach the curve at the
/// current belief", via exact sampling at an exponential time.
pub fn value_from_boundary(
    pack: &ClosedFormPack,
    curve: &BoundaryCurve,
    s: State,
    n_samples: u64,
    stream: RngStream,
) -> McEstimate {
    let shortfall = shortfall_expectation(pack, curve, s.x, s.pi, n_samples, stream);
    McEstimate {
        mean: payoff_g(&pack.params, s) - shortfall.mean,
        std_error: shortfall.std_error,
        n: shortfall.n,
    }
}

/// Value with the drift revealed at time zero: the prior mixture of the
/// known-drift values. Closed form, no sampling.
pub fn full_info_value(pack: &ClosedFormPack, s: State) -> f64 {
    (1.0 - s.pi) * pack.known_drift_value(0, s.x) + s.pi * pack.known_drift_value(1, s.x)
}

/// One belief slice of the value-of-information surface.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VoiSlice {
    pub pi: f64,
    pub v_bar: Vec<f64>,
    pub v: Vec<McEstimate>,
    pub delta: Vec<f64>,
    pub delta_se: Vec<f64>,
    /// Grid location of the largest delta in this slice.
    pub argmax_x: f64,
    pub max_delta: f64,
}

/// Value-of-information surface on an x grid for a list of beliefs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VoiSurface {
    pub x_grid: Vec<f64>,
    pub slices: Vec<VoiSlice>,
}

/// Estimates the value of information on `x_grid` for each belief in
/// `pi_list`.
///
/// Within a slice all x use common random numbers (the same exponential
/// times and normals), so differences of delta along the grid — and in
/// particular the argmax — are resolved far below the single-point
/// standard error.
pub fn value_of_information(
    pack: &ClosedFormPack,
    curve: &BoundaryCurve,
    x_grid: &[f64],
    pi_list: &[f64],
    n_samples: u64,
    stream: RngStream,
) -> Result<VoiSurface> {
    let b0 = curve.eval(0.0);
    if x_grid.is_empty() {
        return Err(StopwellError::InvalidInput("empty x grid".into()));
    }
    for &x in x_grid {
        if !(x > 0.0) || x > b0 * (1.0 + 1e-9) {
            return Err(StopwellError::InvalidInput(format!(
                "voi x grid must lie in (0, b(0)] = (0, {b0:.4}], got {x}"
            )));
        }
    }
    let mut slices = Vec::with_capacity(pi_list.len());
    for (si, &pi) in pi_list.iter().enumerate() {
        let slice_stream = stream.substream(1 + si as u64);
        let mut v_bar = Vec::with_capacity(x_grid.len());
        let mut v = Vec::with_capacity(x_grid.len());
        let mut delta = Vec::with_capacity(x_grid.len());
        let mut delta_se = Vec::with_capacity(x_grid.len());
        let mut argmax_x = x_grid[0];
        let mut max_delta = f64::NEG_INFINITY;
        for &x in x_grid {
            let s = State { x, pi };
            let vb = full_info_value(pack, s);
            let est = value_from_boundary(pack, curve, s, n_samples, slice_stream);
            let d = vb - est.mean;
            if d > max_delta {
                max_delta = d;
                argmax_x = x;
            }
            v_bar.push(vb);
            v.push(est);
            delta.push(d);
            delta_se.push(est.std_error);
        }
        slices.push(VoiSlice { pi, v_bar, v, delta, delta_se, argmax_x, max_delta });
    }
    Ok(VoiSurface { x_grid: x_grid.to_vec(), slices })
}

/// Path-simulated payoff of the first-entry strategy for a curve:
/// discount to the first monitor time with `X >= curve(Pi)` and collect
/// the investment payoff there; paths that never enter by the horizon
/// contribute zero.
///
/// Independent of the shortfall identity — this is the cross-check
/// estimator. Beliefs along the path come from the closed-form filter at
/// the monitor times.
pub fn strategy_payoff(
    pack: &ClosedFormPack,
    s0: State,
    curve: &BoundaryCurve,
    dt: f64,
    horizon: f64,
    n_samples: u64,
    stream: RngStream,
) -> Result<McEstimate> {
    if !(dt > 0.0) || !(horizon >= dt) {
        return Err(StopwellError::InvalidInput("need dt > 0 and horizon >= dt".into()));
    }
    let p = pack.params;
    let s2 = p.sigma * p.sigma;
    let k = (p.mu1 - p.mu0) / s2;
    let time_coef = 0.5 * (s2 - p.mu1 - p.mu0);
    let logit0 = if s0.pi > 0.0 && s0.pi < 1.0 {
        (s0.pi / (1.0 - s0.pi)).ln()
    } else {
        f64::NAN
    };
    let n_steps = (horizon / dt).round() as u64;
    let est = parallel_estimate(stream, n_samples, move |rng| {
        let theta = usize::from(rng.random::<f64>() < s0.pi);
        let drift = (p.drift(theta) - 0.5 * s2) * dt;
        let vol = p.sigma * dt.sqrt();
        let mut log_growth = 0.0;
        let mut step = 0u64;
        loop {
            let t = step as f64 * dt;
            let pi = if s0.pi <= 0.0 {
                0.0
            } else if s0.pi >= 1.0 {
                1.0
            } else {
                let zeta = logit0 + k * (log_growth + time_coef * t);
                if zeta >= 0.0 {
                    1.0 / (1.0 + (-zeta).exp())
                } else {
                    let e = zeta.exp();
                    e / (1.0 + e)
                }
            };
            let x = s0.x * log_growth.exp();
            if x >= curve.eval(pi) {
                return (-p.r * t).exp() * payoff_g(&p, State { x, pi });
            }
            if step >= n_steps {
                return 0.0;
            }
            step += 1;
            let z: f64 = rng.sample(StandardNormal);
            log_growth += drift + vol * z;
        }
    });
    Ok(est)
}

/// Documented truncation bound for the path estimator: discounted tail
/// mass `exp(-r T) x / (r - mu1)`.
pub fn strategy_payoff_truncation_bound(pack: &ClosedFormPack, x: f64, horizon: f64) -> f64 {
    (-pack.params.r * horizon).exp() * x / (pack.params.r - pack.params.mu1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::reference_params;

    fn pack() -> ClosedFormPack {
        ClosedFormPack::new(reference_params()).unwrap()
    }

    fn pinned_curve(pack: &ClosedFormPack, which: usize, m: usize) -> BoundaryCurve {
        let grid = BoundaryCurve::uniform_grid(m);
        let v = vec![pack.threshold(which); m];
        BoundaryCurve::new(grid, v).unwrap()
    }

    #[test]
    fn known_drift_value_reproduced_at_pi_one() {
        let cf = pack();
        let curve = pinned_curve(&cf, 1, 5);
        let est = value_from_boundary(
            &cf,
            &curve,
            State { x: 5.0, pi: 1.0 },
            200_000,
            RngStream::new(11, 0),
        );
        assert!(
            est.consistent_with(159.05430426168203, 3.0),
            "{} +- {}",
            est.mean,
            est.std_error
        );
    }

    #[test]
    fn value_equals_payoff_in_stopping_region() {
        let cf = pack();
        let curve = BoundaryCurve::from_lower_bound(&cf, 51);
        let s = State { x: cf.xstar0 * 1.2, pi: 0.4 };
        let est = value_from_boundary(&cf, &curve, s, 100_000, RngStream::new(12, 0));
        let g = payoff_g(&cf.params, s);
        assert!(est.consistent_with(g, 3.0), "{} vs {}", est.mean, g);
        // in the stopping region the integrand vanishes sample-wise
        assert!(est.std_error < 1e-9);
    }

    #[test]
    fn value_vanishes_near_origin() {
        let cf = pack();
        let curve = BoundaryCurve::from_lower_bound(&cf, 51);
        let s = State { x: 0.01, pi: 0.5 };
        let est = value_from_boundary(&cf, &curve, s, 100_000, RngStream::new(13, 0));
        let slack = 3.0 * est.std_error + 0.01 / (cf.params.r - cf.params.mu1);
        assert!(est.mean.abs() <= slack, "{} not within {}", est.mean, slack);
        assert!(est.mean >= -3.0 * est.std_error);
    }

    #[test]
    fn full_info_value_mixture() {
        let cf = pack();
        let s = State { x: 5.0, pi: 0.5 };
        let want = 0.5 * cf.known_drift_value(0, 5.0) + 0.5 * 159.05430426168203;
        assert!((full_info_value(&cf, s) - want).abs() < 1e-9);
        assert_eq!(full_info_value(&cf, State { x: 5.0, pi: 1.0 }), cf.known_drift_value(1, 5.0));
        assert_eq!(full_info_value(&cf, State { x: 5.0, pi: 0.0 }), cf.known_drift_value(0, 5.0));
    }

    #[test]
    fn full_info_dominates_value() {
        let cf = pack();
        let curve = BoundaryCurve::from_lower_bound(&cf, 51);
        for (i, &(x, pi)) in [(2.0, 0.3), (6.5, 0.7), (8.0, 0.5), (4.0, 0.9)].iter().enumerate() {
            let s = State { x, pi };
            let est = value_from_boundary(&cf, &curve, s, 100_000, RngStream::new(14, i as u64));
            assert!(
                full_info_value(&cf, s) >= est.mean - 3.0 * est.std_error,
                "upper bound violated at x={x}, pi={pi}"
            );
        }
    }

    #[test]
    fn voi_rejects_out_of_range_grid() {
        let cf = pack();
        let curve = BoundaryCurve::from_lower_bound(&cf, 11);
        let err = value_of_information(&cf, &curve, &[20.0], &[0.5], 10_000, RngStream::new(1, 0));
        assert!(err.is_err());
    }

    #[test]
    fn strategy_payoff_agrees_with_shortfall_estimator() {
        let cf = pack();
        let curve = BoundaryCurve::from_lower_bound(&cf, 51);
        let s = State { x: 7.5, pi: 0.5 };
        let a = value_from_boundary(&cf, &curve, s, 400_000, RngStream::new(15, 0));
        let b = strategy_payoff(&cf, s, &curve, 0.02, 160.0, 30_000, RngStream::new(16, 0)).unwrap();
        let allowance = strategy_payoff_truncation_bound(&cf, s.x, 160.0)
            + 0.5 * cf.params.sigma * (0.02f64).sqrt() * s.x * cf.params.perpetuity_factor(s.pi);
        let tol = 3.0 * (a.std_error + b.std_error) + allowance;
        assert!(
            (a.mean - b.mean).abs() < tol,
            "estimators disagree: {} vs {} (tol {tol})",
            a.mean,
            b.mean
        );
    }

    #[test]
    fn suboptimal_curve_payoff_below_value() {
        let cf = pack();
        let high = pinned_curve(&cf, 0, 21); // stop only at x*_0 even when sure of mu1
        let curve = BoundaryCurve::from_lower_bound(&cf, 51);
        let s = State { x: 7.5, pi: 0.5 };
        let v = value_from_boundary(&cf, &curve, s, 400_000, RngStream::new(17, 0));
        let sub = strategy_payoff(&cf, s, &high, 0.02, 160.0, 30_000, RngStream::new(18, 0)).unwrap();
        assert!(sub.mean <= v.mean + 3.0 * (v.std_error + sub.std_error));
    }
}
