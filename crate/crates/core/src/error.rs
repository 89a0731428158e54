use thiserror::Error;

/// Errors produced by the numerical routines and the experiment driver.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Same as [`Error::Domain`] but attributed to one element of a vector.
    #[error("domain error at index {index}: {message}")]
    DomainAt { index: usize, message: String },

    /// A parameter value the routine does not support (e.g. `t = 2` in `F_t`).
    #[error("unsupported parameter: {0}")]
    Unsupported(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Non-finite intermediate values or a bracket that could not be formed.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

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

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn at(index: usize, err: Error) -> Self {
        match err {
            Error::Domain(message) => Error::DomainAt { index, message },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
