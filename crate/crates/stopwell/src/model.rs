//! Model primitives: the economic parameters and the reward from investing.
//!
//! A project pays a perpetual profit flow following a geometric Brownian
//! motion whose drift is either `mu0` or `mu1` (hidden, two-point prior).
//! Investing costs `invest_cost` and is irreversible. The reward of
//! investing at profit level `x` under belief `pi` (probability that the
//! drift is `mu1`) is the discounted expected profit stream minus the cost:
//!
//! ```text
//! g(x, pi) = x * ((1 - pi)/(r - mu0) + pi/(r - mu1)) - invest_cost
//! ```
//!
//! Every other module takes a validated [`ModelParams`]; all downstream
//! formulas divide by `r - mu_i`, so validation is eager and total.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StopwellError};

/// Economic primitives. All rates are per unit time, unitless otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Low drift state.
    pub mu0: f64,
    /// High drift state; `mu0 < mu1 < r`.
    pub mu1: f64,
    /// Volatility, > 0.
    pub sigma: f64,
    /// Discount rate, > max(mu0, mu1).
    pub r: f64,
    /// Sunk cost of investing, > 0.
    pub invest_cost: f64,
}

impl ModelParams {
    /// Validates and returns the parameter set.
    ///
    /// Each violated constraint maps to a distinct error so callers can
    /// report exactly what is wrong with a configuration.
    pub fn new(mu0: f64, mu1: f64, sigma: f64, r: f64, invest_cost: f64) -> Result<Self> {
        let p = ModelParams { mu0, mu1, sigma, r, invest_cost };
        p.validate()
    }

    pub fn validate(self) -> Result<Self> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(StopwellError::NonPositiveSigma(self.sigma));
        }
        if !(self.invest_cost > 0.0) || !self.invest_cost.is_finite() {
            return Err(StopwellError::NonPositiveCost(self.invest_cost));
        }
        if !(self.mu0 < self.mu1) {
            return Err(StopwellError::DriftOrdering { mu0: self.mu0, mu1: self.mu1 });
        }
        if !(self.r > self.mu1) || !(self.r > 0.0) {
            return Err(StopwellError::DiscountTooSmall { r: self.r, mu1: self.mu1 });
        }
        if !self.mu0.is_finite() || !self.r.is_finite() {
            return Err(StopwellError::InvalidInput("non-finite rate".into()));
        }
        Ok(self)
    }

    /// Drift for a known regime index (0 or 1).
    #[inline]
    pub fn drift(&self, which: usize) -> f64 {
        if which == 0 { self.mu0 } else { self.mu1 }
    }

    /// Belief-weighted drift `mu0 + pi (mu1 - mu0)`.
    #[inline]
    pub fn drift_at(&self, pi: f64) -> f64 {
        self.mu0 + pi * (self.mu1 - self.mu0)
    }

    /// Perpetuity factor `(1-pi)/(r-mu0) + pi/(r-mu1)`, the slope of the
    /// payoff in `x`.
    #[inline]
    pub fn perpetuity_factor(&self, pi: f64) -> f64 {
        (1.0 - pi) / (self.r - self.mu0) + pi / (self.r - self.mu1)
    }
}

/// A point of the two-dimensional state space: profit level and belief.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    /// Current profit level, > 0.
    pub x: f64,
    /// Probability that the drift is `mu1`, in [0, 1].
    pub pi: f64,
}

impl State {
    pub fn new(x: f64, pi: f64) -> Result<Self> {
        if !(x > 0.0) || !x.is_finite() {
            return Err(StopwellError::InvalidState(format!("x must be positive, got {x}")));
        }
        if !(0.0..=1.0).contains(&pi) {
            return Err(StopwellError::InvalidState(format!("pi must be in [0,1], got {pi}")));
        }
        Ok(State { x, pi })
    }
}

/// Reward from investing now at state `s`.
#[inline]
pub fn payoff_g(params: &ModelParams, s: State) -> f64 {
    s.x * params.perpetuity_factor(s.pi) - params.invest_cost
}

/// d g / d x at belief `pi` (independent of x).
#[inline]
pub fn payoff_dx(params: &ModelParams, pi: f64) -> f64 {
    params.perpetuity_factor(pi)
}

/// d g / d pi at profit level `x` (independent of pi).
#[inline]
pub fn payoff_dpi(params: &ModelParams, x: f64) -> f64 {
    x * (1.0 / (params.r - params.mu1) - 1.0 / (params.r - params.mu0))
}

/// Reference parameter set used throughout the test-suite and docs:
/// mu0 = 0.01, mu1 = 0.03, sigma = 0.2, r = 0.05, I = 100.
pub fn reference_params() -> ModelParams {
    ModelParams::new(0.01, 0.03, 0.2, 0.05, 100.0).expect("reference set is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_set_validates() {
        let p = ModelParams::new(0.01, 0.03, 0.2, 0.05, 100.0).unwrap();
        assert_eq!(p.mu1, 0.03);
    }

    #[test]
    fn each_constraint_has_its_own_error() {
        assert!(matches!(
            ModelParams::new(0.03, 0.01, 0.2, 0.05, 100.0),
            Err(StopwellError::DriftOrdering { .. })
        ));
        assert!(matches!(
            ModelParams::new(0.01, 0.06, 0.2, 0.05, 100.0),
            Err(StopwellError::DiscountTooSmall { .. })
        ));
        assert!(matches!(
            ModelParams::new(0.01, 0.03, 0.0, 0.05, 100.0),
            Err(StopwellError::NonPositiveSigma(_))
        ));
        assert!(matches!(
            ModelParams::new(0.01, 0.03, 0.2, 0.05, -1.0),
            Err(StopwellError::NonPositiveCost(_))
        ));
    }

    #[test]
    fn payoff_reference_values() {
        let p = reference_params();
        // g(0+, pi) -> -I; use the limit behaviour through a tiny x
        let g0 = payoff_g(&p, State { x: 1e-300, pi: 0.5 });
        assert!((g0 + 100.0).abs() < 1e-9);
        // zero of g at x = (r - mu0) I when pi = 0
        let g4 = payoff_g(&p, State::new(4.0, 0.0).unwrap());
        assert!(g4.abs() < 1e-12);
        let g51 = payoff_g(&p, State::new(5.0, 1.0).unwrap());
        assert!((g51 - 150.0).abs() < 1e-12);
    }

    #[test]
    fn payoff_linear_in_pi() {
        let p = reference_params();
        for &x in &[0.7, 4.0, 9.3, 55.0] {
            for &pi in &[0.0, 0.21, 0.5, 0.83, 1.0] {
                let lhs = payoff_g(&p, State { x, pi });
                let rhs = (1.0 - pi) * payoff_g(&p, State { x, pi: 0.0 })
                    + pi * payoff_g(&p, State { x, pi: 1.0 });
                assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
            }
        }
    }

    #[test]
    fn payoff_monotone_in_both_arguments() {
        let p = reference_params();
        let xs: Vec<f64> = (1..60).map(|i| 0.3 * i as f64).collect();
        let pis: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
        for w in xs.windows(2) {
            for &pi in &pis {
                assert!(payoff_g(&p, State { x: w[1], pi }) > payoff_g(&p, State { x: w[0], pi }));
            }
        }
        for &x in &xs {
            for w in pis.windows(2) {
                assert!(payoff_g(&p, State { x, pi: w[1] }) > payoff_g(&p, State { x, pi: w[0] }));
            }
        }
    }
}
