use thiserror::Error;

/// Errors raised by the inference library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A size guard was exceeded (state space, particle count, ...).
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    /// A numerical routine failed to reach its tolerance.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// A set of moment constraints admits no probability measure.
    #[error("infeasible constraint set: {0}")]
    Infeasible(String),
    /// Input data is malformed or internally inconsistent.
    #[error("data error: {0}")]
    Data(String),
    /// A text input could not be parsed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
