use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A point lies outside the region where a geometric query is defined.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("simulation diverged: particle {particle} at step {step}: {detail}")]
    Divergence {
        particle: usize,
        step: usize,
        detail: String,
    },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    /// A user-supplied law or coefficient broke its declared contract.
    #[error("contract violation: {0}")]
    ContractViolation(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(what: &str, xs: &[f64]) -> Result<()> {
    if xs.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} has non-finite entries: {xs:?}")))
    }
}
