use thiserror::Error;

/// Errors raised by the solvers and their input validation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("grid needs at least {min} points per side, got {got}")]
    TooFewPoints { min: usize, got: usize },

    #[error("side length must be positive and finite, got {0}")]
    BadSideLength(f64),

    #[error("magnetic-periodic square needs R^2/(2 pi) integral, got R = {side} (R^2/2pi = {ratio})")]
    NonIntegralFlux { side: f64, ratio: f64 },

    #[error("field has {got} values but the grid has {expected} nodes")]
    LengthMismatch { expected: usize, got: usize },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("parameter {name} = {value} outside valid range {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("operation needs a nonzero field")]
    ZeroField,

    #[error("eigensolver did not converge after {iterations} iterations (max residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("lowest Landau band not resolved: {0}")]
    GapNotResolved(String),

    #[error("operation requires magnetic-periodic boundary conditions")]
    NotPeriodic,

    #[error("sign regime mismatch: {0}")]
    SignRegime(String),

    #[error("{0}")]
    Precondition(String),

    #[error("not enough data: {0}")]
    NotEnoughData(String),

    #[error("no admissible square of side {side:.4} with inset {inset:.4} fits the domain")]
    NoAdmissibleSquare { side: f64, inset: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
