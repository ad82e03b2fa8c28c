use thiserror::Error;

use crate::pool::AugmentedInput;

/// Errors produced by the sampling library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("no selectable candidate remains")]
    EmptySelection,

    #[error("oracle failed on point {} level {}: {message}", input.point_index, input.level)]
    Oracle {
        input: AugmentedInput,
        message: String,
    },

    #[error("oracle timed out after {seconds} s on point {} level {}", input.point_index, input.level)]
    OracleTimeout { input: AugmentedInput, seconds: f64 },

    #[error("malformed oracle response to point {} level {}: `{response}`", input.point_index, input.level)]
    OracleProtocol { input: AugmentedInput, response: String },

    #[error("oracle process exited ({status}) while evaluating point {} level {}", input.point_index, input.level)]
    OracleExited { input: AugmentedInput, status: String },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
