use thiserror::Error;

/// Errors raised by the numerical routines and the model loaders.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error(
        "lift of dimension {n} and degree {m} has {size} monomials, above the limit of {limit}"
    )]
    Sizing {
        n: usize,
        m: usize,
        size: u128,
        limit: usize,
    },

    #[error("invalid model: {}", .0.join("; "))]
    InvalidModel(Vec<String>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(
        "quadrature did not reach tolerance after {subdivisions} subdivisions \
         (error estimate {error_bound:e})"
    )]
    Accuracy {
        /// Best available estimate, row-major.
        estimate: Vec<f64>,
        error_bound: f64,
        subdivisions: usize,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by the numerics rather than by the input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_) | Error::Accuracy { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
