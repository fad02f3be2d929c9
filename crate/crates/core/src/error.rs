use thiserror::Error;

/// Errors raised by models, proposals, estimators and the training loop.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("parameter length mismatch: expected {expected}, got {got}")]
    ParameterMismatch { expected: usize, got: usize },

    #[error("{0} is not supported")]
    Unsupported(&'static str),

    #[error("point lies outside the support")]
    OutOfSupport,

    #[error("degenerate weights: {0}")]
    DegenerateWeights(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("enumeration would visit {0} outcomes, above the cap")]
    EnumerationTooLarge(u128),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, x: &[f64]) -> Result<()> {
    if x.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: x.len(),
        });
    }
    Ok(())
}

pub(crate) fn check_params(expected: usize, theta: &[f64]) -> Result<()> {
    if theta.len() != expected {
        return Err(Error::ParameterMismatch {
            expected,
            got: theta.len(),
        });
    }
    Ok(())
}

pub(crate) fn require(cond: bool, msg: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidArgument(msg.into()))
    }
}
