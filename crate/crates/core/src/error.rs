use thiserror::Error;

/// Errors produced by the modeling, simulation, estimation, and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    /// A scalar argument is outside its mathematical domain (e.g. a non-positive
    /// relaxation time or a degenerate grid range).
    #[error("domain error: {0}")]
    Domain(String),

    /// Inconsistent configuration: mismatched grids, modes, schedules, or shapes.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data violates a contract (empty mask, missing encodings, non-finite values).
    #[error("data error: {0}")]
    Data(String),

    /// A numerical procedure failed (diverged, became non-finite, or the problem
    /// is unidentifiable at the requested conditioning cap).
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
