use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("time {t} outside the admissible interval [{lo}, {hi}]")]
    TimeOutOfRange { t: f64, lo: f64, hi: f64 },

    #[error("singular {what} at t = {t}")]
    Singularity { what: &'static str, t: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("signal-to-noise ratio of the {which} schedule is not strictly monotone on [{lo}, {hi}]")]
    NonMonotoneSnr { which: &'static str, lo: f64, hi: f64 },

    #[error("SNR value {target} is not bracketed by [{lo}, {hi}]")]
    NotBracketed { target: f64, lo: f64, hi: f64 },

    #[error("start time {t} is not a point of the {n_steps}-step grid")]
    OffGrid { t: f64, n_steps: usize },

    #[error("every candidate received a non-finite verifier score")]
    NoFiniteCandidates,

    #[error("compute budget too small: {0}")]
    BudgetTooSmall(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

pub(crate) fn check_finite(what: &str, v: &[f64]) -> Result<()> {
    if v.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}
