use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {message} (line {line}, column {column})")]
    Json { path: String, message: String, line: usize, column: usize },
    #[error("{location}: {reason}")]
    Invalid { location: String, reason: String },
    #[error("mask extents differ: {a_h}x{a_w} vs {b_h}x{b_w}")]
    ExtentMismatch { a_h: usize, a_w: usize, b_h: usize, b_w: usize },
    #[error("IoU of two empty masks is undefined")]
    EmptyMasks,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EvalError {
    pub(crate) fn invalid(location: impl Into<String>, reason: impl Into<String>) -> Self {
        EvalError::Invalid { location: location.into(), reason: reason.into() }
    }
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;
