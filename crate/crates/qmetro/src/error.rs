//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the library.
///
/// The CLI maps these onto exit codes: configuration problems exit 1,
/// solver failures exit 2, certification failures exit 3.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid user-supplied configuration (dimensions, names, parameters).
    #[error("config: {0}")]
    Config(String),

    /// Shape/registry mismatch in an internal operation.
    #[error("shape: {0}")]
    Shape(String),

    /// Numerical failure (non-convergence, loss of positivity, …).
    #[error("numeric: {0}")]
    Numeric(String),

    /// The interior-point solver failed to reach the requested tolerances.
    #[error("solver: {0}")]
    Solver(String),

    /// Exact certification could not produce a valid bound.
    #[error("certify: {0}")]
    Certify(String),

    /// I/O or serialization failure.
    #[error("io: {0}")]
    Io(String),
}

impl Error {
    /// Shorthand for a configuration error.
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Shorthand for a shape error.
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// Shorthand for a numeric error.
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Shorthand for a solver error.
    pub fn solver(msg: impl Into<String>) -> Self {
        Error::Solver(msg.into())
    }

    /// Shorthand for a certification error.
    pub fn certify(msg: impl Into<String>) -> Self {
        Error::Certify(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
