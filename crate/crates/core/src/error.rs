use thiserror::Error;

use crate::fsm::{FsmState, Trigger};

/// Errors produced by the monitoring library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at EM iteration {iteration}: {reason}")]
    TrainingDiverged { iteration: usize, reason: String },

    #[error("invalid model: field `{field}`: {message}")]
    InvalidModel { field: String, message: String },

    #[error("trigger {trigger} rejected in state {state}: invalid trigger for state")]
    RejectedTrigger { state: FsmState, trigger: Trigger },

    #[error("replay mismatch at history index {index}: {message}")]
    ReplayMismatch { index: usize, message: String },

    /// A bad line in a JSON Lines file; `line` is 1-based.
    #[error("line {line}: {message}")]
    InvalidRecord { line: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn bad_model(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::InvalidModel {
        field: field.into(),
        message: message.into(),
    }
}

/// A JSON Lines parse failure at 1-based `line`, with serde's in-line
/// position reduced to a column.
pub(crate) fn bad_line(line: usize, e: serde_json::Error) -> Error {
    let full = e.to_string();
    let suffix = format!(" at line {} column {}", e.line(), e.column());
    let message = match full.strip_suffix(&suffix) {
        Some(m) => format!("{m} (column {})", e.column()),
        None => full,
    };
    Error::InvalidRecord { line, message }
}
