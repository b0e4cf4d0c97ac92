//! Optimal timing of an irreversible investment when the profit growth
//! rate is hidden.
//!
//! Profits follow a geometric Brownian motion whose drift is one of two
//! values, unknown to the agent; investing costs a lump sum and pays the
//! discounted profit stream from then on. The optimal rule invests the
//! first time the profit level exceeds a decreasing, continuous boundary
//! `b(pi)` of the posterior belief `pi`, connecting the two known-drift
//! thresholds.
//!
//! The crate computes that boundary two independent ways and cross-checks
//! them:
//!
//! * [`boundary`] — Monte-Carlo fixed-point iteration on the nonlinear
//!   integral equation satisfied by `b`, sampling the state exactly at an
//!   exponential time (no discretization bias);
//! * [`pde`] — projected-SOR solution of the variational inequality for
//!   the value function on a lattice, with the boundary read off the
//!   contact set and smooth-fit diagnostics.
//!
//! Supporting modules: [`closed_form`] (thresholds, bounds, known-drift
//! values), [`filter`] (the explicit posterior), [`sampling`]
//! (reproducible parallel Monte Carlo), [`valuation`] (value estimates
//! and the value of information), [`config`] and [`cli`] (experiment
//! front end emitting CSV datasets and replayable manifests).

pub mod boundary;
pub mod cli;
pub mod closed_form;
pub mod config;
pub mod error;
pub mod filter;
pub mod mc;
pub mod model;
pub mod pde;
pub mod sampling;
pub mod valuation;

pub use boundary::{fixed_point_solve, integral_residual, psi_apply, BoundaryCurve, IterationReport};
pub use closed_form::{solve_beta, ClosedFormPack};
pub use error::{Result, StopwellError};
pub use filter::{bayes_oracle, posterior_f, sde_belief_step, FilterInput};
pub use mc::McEstimate;
pub use model::{payoff_g, ModelParams, State};
pub use pde::{
    build_generator_stencil, extract_boundary, smooth_fit_diagnostic, solve_obstacle, GridSolution,
    PdeGrid, SweepOrder,
};
pub use sampling::{
    first_passage_discounted, sample_at_exponential_time, simulate_path, PathSample, RngStream,
    SampleOne,
};
pub use valuation::{
    full_info_value, strategy_payoff, value_from_boundary, value_of_information, VoiSurface,
};
