use thiserror::Error;

/// Errors surfaced by model validation, solvers and I/O.
#[derive(Debug, Error)]
pub enum StopwellError {
    #[error("sigma must be positive, got {0}")]
    NonPositiveSigma(f64),

    #[error("investment cost must be positive, got {0}")]
    NonPositiveCost(f64),

    #[error("discount rate must exceed both drifts: r = {r}, mu1 = {mu1}")]
    DiscountTooSmall { r: f64, mu1: f64 },

    #[error("drift ordering violated: mu0 = {mu0} must be strictly below mu1 = {mu1}")]
    DriftOrdering { mu0: f64, mu1: f64 },

    #[error("state invalid: {0}")]
    InvalidState(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("Monte-Carlo estimate degenerate at pi = {pi}: SE {se:.3e} exceeds 10% of update {update:.3e}")]
    EstimateDegenerate { pi: f64, se: f64, update: f64 },

    #[error("fixed-point iteration did not converge within {max_iter} iterations (last sup change {last_change:.3e})")]
    NonConvergence { max_iter: usize, last_change: f64 },

    #[error("obstacle solver did not converge within {max_sweeps} sweeps (last update {last_update:.3e})")]
    PdeNonConvergence { max_sweeps: usize, last_update: f64 },

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("stopping region not reached on the grid for pi = {0}; widen the domain")]
    EmptyStoppingRow(f64),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, StopwellError>;
