use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure classes reported by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid component: {0}")]
    InvalidComponent(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Every component assigns zero density to an observation, or a fit
    /// produced a degenerate configuration that cannot be repaired.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("component {component} collapsed (mass {mass:.3e})")]
    Collapse { component: usize, mass: f64 },

    #[error("empty stream")]
    EmptyStream,

    #[error("stream cannot be replayed for another pass")]
    NotReplayable,

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Coarse grouping of [`Error`] used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidArgument(_) => ErrorClass::Usage,
            Error::Degenerate(_) | Error::Collapse { .. } => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn dim(expected: usize, found: usize) -> Self {
        Error::DimensionMismatch { expected, found }
    }
}
