//! Error type shared by every module of the crate.

use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GriffinError>;

#[derive(Debug, Error)]
pub enum GriffinError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("non-finite value in {context} at flat index {index}")]
    NonFinite { context: &'static str, index: usize },

    /// Malformed binary weight container.
    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: usize, message: String },

    /// Malformed text input (token files, CSV).
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl GriffinError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        GriffinError::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(
        context: &'static str,
        expected: impl std::fmt::Display,
        got: impl std::fmt::Display,
    ) -> Self {
        GriffinError::ShapeMismatch {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// True for errors caused by malformed input data rather than bad arguments.
    pub fn is_data_format(&self) -> bool {
        matches!(
            self,
            GriffinError::Format { .. }
                | GriffinError::Parse { .. }
                | GriffinError::Json(_)
                | GriffinError::Csv(_)
        )
    }

    /// True for numeric failures (non-finite values, degenerate statistics).
    pub fn is_numeric(&self) -> bool {
        matches!(self, GriffinError::NonFinite { .. })
    }
}
