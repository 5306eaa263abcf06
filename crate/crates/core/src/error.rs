use thiserror::Error;

/// A precondition on an argument was violated.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("domain error: {0}")]
pub struct DomainError(pub String);

impl DomainError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("degenerate gradient (|grad| = {magnitude:e}) at ({x}, {y}, {z})")]
    DegenerateGradient { magnitude: f64, x: f64, y: f64, z: f64 },
    #[error("malformed volume file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
