use alloc::string::String;

/// Errors raised by the benchmark core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("problem too large: {entries} matrix entries exceed the cap of {cap}")]
    Capacity { entries: usize, cap: usize },

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch { what: &'static str, expected: usize, found: usize },

    #[error("coupling matrix is singular or numerically singular")]
    Singular,

    #[error("quadratic form is not convex (smallest eigenvalue {lambda_min:e})")]
    NotConvex { lambda_min: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("undefined metric: reference {0} has zero norm")]
    UndefinedMetric(&'static str),

    #[error("unsupported combination: {0}")]
    Unsupported(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { what, expected, found })
    }
}
