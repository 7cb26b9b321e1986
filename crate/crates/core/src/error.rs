use thiserror::Error;

/// Errors produced by the sampling library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("state does not conform to domain: {0}")]
    InvalidState(String),

    #[error("non-finite value in {0}; the energy or its gradient is invalid at this state")]
    NonFinite(&'static str),

    #[error("state space has {count} states, above the cap of {cap}; use sampling instead of enumeration")]
    StateCapExceeded { count: u128, cap: u128 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("transition kernel is reducible: {0}")]
    Reducible(String),

    #[error("stationary distribution did not converge: {0}")]
    NotConverged(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
