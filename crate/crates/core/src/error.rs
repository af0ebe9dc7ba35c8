use thiserror::Error;

use crate::tensor::Axis;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: {axis} axis mismatch: {detail}")]
    Shape { op: &'static str, axis: Axis, detail: String },

    #[error("{op}: {detail}")]
    Divisibility { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value while probing {location}")]
    NonFinite { location: String },

    #[error("malformed tensor archive at byte {offset}: {reason}")]
    Archive { offset: usize, reason: String },

    #[error("missing parameter `{0}`")]
    MissingParameter(String),

    #[error("parameter `{name}` has shape {found}, expected {expected}")]
    ParameterShape { name: String, expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, axis: Axis, detail: impl Into<String>) -> Self {
        Error::Shape { op, axis, detail: detail.into() }
    }

    pub(crate) fn divisibility(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Divisibility { op, detail: detail.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
