use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, found {found} ({context})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    #[error("candidate set is empty")]
    EmptyCandidates,

    #[error("insufficient samples: need at least {needed}, have {found}")]
    InsufficientSamples { needed: u64, found: u64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("filter diverged at step {step}: covariance trace {trace} exceeds bound {bound}")]
    Divergence { step: u64, trace: f64, bound: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
