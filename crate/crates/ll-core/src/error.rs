//! Crate-wide error type.

/// Errors reported by the laboratory.
///
/// `Config` means the request itself is malformed (bad parameter ranges,
/// incompatible grid/boundary combinations); `Numerical` means a computation
/// was attempted and failed (step-size underflow, singular solve, guard
/// violation in a regime where continuing would be meaningless).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
