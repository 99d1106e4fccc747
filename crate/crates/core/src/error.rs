use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// A pivot was non-positive during factorization, even after jitter.
    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("index {index} out of bounds for dimension {len}")]
    OutOfBounds { index: usize, len: usize },

    #[error("operation requires a non-empty training set")]
    EmptySet,

    #[error("regressor duplicates an existing training point (distance {distance:e})")]
    DuplicatePoint { distance: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("constraint violation: {0}")]
    ConstraintViolation(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
