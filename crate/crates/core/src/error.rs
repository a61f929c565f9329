//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    /// An input failed a structural precondition (shape, count, range).
    #[error("validation: {0}")]
    Validation(String),

    /// A 6-D rotation input was degenerate (zero or parallel columns).
    #[error("degenerate rotation input: {0}")]
    DegenerateRotation(String),

    /// Training produced a non-finite loss or activation.
    #[error("training diverged: {0}")]
    Divergence(String),

    /// A file had the wrong magic, version, or section layout.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    /// Checkpoint or asset contents disagree with the active configuration.
    #[error("incompatible artifact: {0}")]
    Incompatible(String),

    /// A pipeline stage was invoked before its prerequisites exist.
    #[error("missing prerequisite: {0}")]
    MissingPrerequisite(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CoreError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CoreError::Validation(msg.into())
    }

    pub fn parse(offset: u64, msg: impl Into<String>) -> Self {
        CoreError::Parse {
            offset,
            message: msg.into(),
        }
    }
}
