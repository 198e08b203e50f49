use thiserror::Error;

/// Error type shared by every module of the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("format error at byte offset {offset}: {reason}")]
    ByteOffset { offset: usize, reason: String },

    #[error("format error at field {index}: {reason}")]
    Field { index: usize, reason: String },

    #[error("format error: missing or malformed key {0}")]
    Key(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("oracle error: non-finite evaluation at coordinate {coordinate}")]
    Oracle { coordinate: usize },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("optimization error: non-finite loss at step {step}")]
    Optimization { step: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}
