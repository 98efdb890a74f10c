use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("field defined on a different grid (expected {expected} cells/axis, got {got})")]
    GridMismatch { expected: usize, got: usize },

    #[error("mobility must be strictly positive (found {value:e} at face index {index})")]
    NonPositiveMobility { value: f64, index: usize },

    #[error("right-hand side must have zero mean (|mean| = {mean:e})")]
    NonZeroMean { mean: f64 },

    #[error("initial profile requires domain length {required}, grid has {got}")]
    DomainSize { required: f64, got: f64 },

    #[error("scheme needs {needed} history level(s), state has {got}")]
    MissingHistory { needed: usize, got: usize },

    #[error(
        "solver did not reach tolerance {tau:e} within {cycles} V-cycles (last residual {last:e})"
    )]
    NonConvergence {
        tau: f64,
        cycles: usize,
        last: f64,
        /// Combined residual norm after each cycle, entry 0 is the initial guess.
        history: Vec<f64>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
