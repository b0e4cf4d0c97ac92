//! Bayesian drift filter.
//!
//! The posterior probability that the drift is `mu1`, given the profit
//! path observed up to time `t`, depends on the path only through the
//! current level. In closed form, with likelihood exponent
//! `k = (mu1 - mu0)/sigma^2`:
//!
//! ```text
//! f(t, x0, pi0, y) = pi0 L / (1 - pi0 + pi0 L),
//! L = ((y/x0) exp((sigma^2 - mu1 - mu0) t / 2))^k
//! ```
//!
//! Everything here is computed in log-odds space: `logit(f) = logit(pi0)
//! + k (ln(y/x0) + (sigma^2 - mu1 - mu0) t / 2)`, which is overflow-safe
//! for extreme `y/x0` and small `sigma`. Beliefs 0 and 1 are absorbing.

use crate::error::{Result, StopwellError};
use crate::model::ModelParams;

/// Inputs of one posterior evaluation.
#[derive(Debug, Clone, Copy)]
pub struct FilterInput {
    /// Elapsed time, >= 0.
    pub t: f64,
    /// Profit level at time 0, > 0.
    pub x0: f64,
    /// Prior probability of the high drift, in [0, 1].
    pub pi0: f64,
    /// Profit level at time `t`, > 0.
    pub y: f64,
}

impl FilterInput {
    pub fn new(t: f64, x0: f64, pi0: f64, y: f64) -> Result<Self> {
        if !(t >= 0.0) || !(x0 > 0.0) || !(y > 0.0) || !(0.0..=1.0).contains(&pi0) {
            return Err(StopwellError::InvalidInput(format!(
                "filter input out of domain: t={t}, x0={x0}, pi0={pi0}, y={y}"
            )));
        }
        Ok(FilterInput { t, x0, pi0, y })
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Log-likelihood ratio `ln L` between the high- and low-drift hypotheses
/// after observing level `y` at time `t` from `x0`.
#[inline]
pub fn log_likelihood_ratio(params: &ModelParams, t: f64, x0: f64, y: f64) -> f64 {
    let s2 = params.sigma * params.sigma;
    let k = (params.mu1 - params.mu0) / s2;
    k * ((y / x0).ln() + 0.5 * (s2 - params.mu1 - params.mu0) * t)
}

/// Posterior probability of the high drift.
pub fn posterior_f(params: &ModelParams, input: FilterInput) -> f64 {
    if input.pi0 <= 0.0 {
        return 0.0;
    }
    if input.pi0 >= 1.0 {
        return 1.0;
    }
    let log_l = log_likelihood_ratio(params, input.t, input.x0, input.y);
    if log_l == 0.0 {
        return input.pi0; // no information yet
    }
    let logit = (input.pi0 / (1.0 - input.pi0)).ln();
    sigmoid(logit + log_l)
}

/// Innovation increment of the observation filtration over a step:
/// the centred, normalised log-profit increment
/// `(d ln X - (mu(pi) - sigma^2/2) dt) / sigma`.
#[inline]
pub fn innovation_increment(params: &ModelParams, pi: f64, d_log_x: f64, dt: f64) -> f64 {
    (d_log_x - (params.drift_at(pi) - 0.5 * params.sigma * params.sigma) * dt) / params.sigma
}

/// One explicit Euler step of the belief SDE
/// `d Pi = (mu1 - mu0)/sigma Pi (1 - Pi) dW_bar`, clamped to [0, 1].
///
/// Test-surface only: estimators evaluate the closed-form posterior
/// instead of integrating this equation along paths.
#[inline]
pub fn sde_belief_step(params: &ModelParams, pi: f64, d_w_bar: f64) -> f64 {
    if pi <= 0.0 {
        return 0.0;
    }
    if pi >= 1.0 {
        return 1.0;
    }
    let kappa = (params.mu1 - params.mu0) / params.sigma;
    (pi + kappa * pi * (1.0 - pi) * d_w_bar).clamp(0.0, 1.0)
}

/// Independent likelihood-weighting oracle: posterior from the two
/// lognormal transition densities of the level at time `t`. Requires
/// `t > 0` (the densities degenerate at `t = 0`). Must agree with
/// [`posterior_f`] to near machine precision.
pub fn bayes_oracle(params: &ModelParams, input: FilterInput) -> Result<f64> {
    if input.t <= 0.0 {
        return Err(StopwellError::InvalidInput(
            "bayes oracle needs t > 0, transition densities degenerate at t = 0".into(),
        ));
    }
    if input.pi0 <= 0.0 {
        return Ok(0.0);
    }
    if input.pi0 >= 1.0 {
        return Ok(1.0);
    }
    let s2 = params.sigma * params.sigma;
    let s = (input.y / input.x0).ln();
    let var = s2 * input.t;
    // log-densities of ln(y/x0) under each regime, common terms dropped
    let l0 = -(s - (params.mu0 - 0.5 * s2) * input.t).powi(2) / (2.0 * var);
    let l1 = -(s - (params.mu1 - 0.5 * s2) * input.t).powi(2) / (2.0 * var);
    let lmax = l0.max(l1);
    let w0 = (1.0 - input.pi0) * (l0 - lmax).exp();
    let w1 = input.pi0 * (l1 - lmax).exp();
    Ok(w1 / (w0 + w1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::reference_params;
    use rand::rngs::SmallRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn no_information_at_time_zero() {
        let p = reference_params();
        for &pi in &[0.0, 0.1, 0.37, 0.5, 0.99, 1.0] {
            let f = posterior_f(&p, FilterInput::new(0.0, 3.0, pi, 3.0).unwrap());
            assert_eq!(f, pi);
        }
    }

    #[test]
    fn absorbing_priors() {
        let p = reference_params();
        for &(pi, want) in &[(0.0, 0.0), (1.0, 1.0)] {
            for &(t, y) in &[(0.5, 1.9), (10.0, 0.01), (200.0, 1e6)] {
                let f = posterior_f(&p, FilterInput::new(t, 1.0, pi, y).unwrap());
                assert_eq!(f, want);
            }
        }
    }

    #[test]
    fn reference_posterior_value() {
        // sigma^2 = mu0 + mu1 makes the time factor vanish; L = e^{0.1}
        let p = reference_params();
        let f = posterior_f(&p, FilterInput::new(1.0, 1.0, 0.5, (0.2f64).exp()).unwrap());
        assert!((f - 0.5249791874789400).abs() < 1e-12);
    }

    #[test]
    fn strictly_increasing_in_y() {
        let p = reference_params();
        let mut prev = -1.0;
        for k in 1..200 {
            let y = 0.1 * k as f64;
            let f = posterior_f(&p, FilterInput::new(2.0, 5.0, 0.4, y).unwrap());
            assert!(f > prev);
            prev = f;
        }
    }

    #[test]
    fn oracle_matches_filter() {
        let p = reference_params();
        let mut rng = SmallRng::seed_from_u64(41);
        for _ in 0..10_000 {
            let t = rng.random_range(1e-6..80.0);
            let x0 = rng.random_range(0.05..50.0);
            let pi0 = rng.random_range(1e-6..1.0 - 1e-6);
            // levels spanning many orders of magnitude
            let y = x0 * (rng.random_range(-6.0..6.0) as f64).exp();
            let input = FilterInput::new(t, x0, pi0, y).unwrap();
            let a = posterior_f(&p, input);
            let b = bayes_oracle(&p, input).unwrap();
            let denom = a.abs().max(1e-300);
            assert!(
                (a - b).abs() / denom < 1e-12 || (a - b).abs() < 1e-15,
                "mismatch at t={t} x0={x0} pi0={pi0} y={y}: {a} vs {b}"
            );
        }
    }

    #[test]
    fn oracle_symmetry_point() {
        // equal likelihoods where the two log-density centres coincide:
        // ln(y/x0) = (mu_avg - sigma^2/2) t
        let p = reference_params();
        let t = 7.0;
        let s2 = p.sigma * p.sigma;
        let y = (((p.mu0 + p.mu1) / 2.0 - 0.5 * s2) * t).exp();
        let f = bayes_oracle(&p, FilterInput::new(t, 1.0, 0.5, y).unwrap()).unwrap();
        assert!((f - 0.5).abs() < 1e-12);
    }

    #[test]
    fn oracle_rejects_t_zero() {
        let p = reference_params();
        assert!(bayes_oracle(&p, FilterInput::new(0.0, 1.0, 0.5, 1.0).unwrap()).is_err());
    }

    #[test]
    fn filter_consistency_under_high_drift_growth() {
        // a path grown deterministically at the high-drift rate convinces
        // the filter
        let p = reference_params();
        let t = 50.0;
        let y = ((p.mu1 - 0.5 * p.sigma * p.sigma) * t).exp();
        let f = posterior_f(&p, FilterInput::new(t, 1.0, 0.5, y).unwrap());
        assert!(f > 0.95, "posterior {f} not convinced at t={t}");
    }

    #[test]
    fn euler_step_absorbing_ends() {
        let p = reference_params();
        assert_eq!(sde_belief_step(&p, 0.0, 0.7), 0.0);
        assert_eq!(sde_belief_step(&p, 1.0, -0.7), 1.0);
        // clamps at the ends
        assert_eq!(sde_belief_step(&p, 0.99, 1e4), 1.0);
    }
}
