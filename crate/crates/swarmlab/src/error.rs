//! Crate-wide error type.
//!
//! Variants map onto the failure classes the public operations distinguish:
//! bad call arguments, non-finite numeric inputs, numeric failures during
//! training, scenario validation, file parsing, and checkpoint/scenario
//! incompatibilities. The CLI maps each variant to a stable exit code.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation precondition (wrong length, bad range,
    /// mismatched shapes).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// An input value was NaN or infinite where a finite number is required.
    #[error("non-finite input: {0}")]
    NumericInput(String),

    /// A numeric failure produced during computation (NaN loss, non-finite
    /// gradient). The message names the offending quantity.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A scenario or config file failed validation; `field` is the path of the
    /// offending entry.
    #[error("validation failed at `{field}`: {message}")]
    Validation { field: String, message: String },

    /// A line-delimited file failed to parse.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A checkpoint does not fit the scenario it is being evaluated against.
    #[error("checkpoint/scenario mismatch: {0}")]
    Mismatch(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub fn numeric_input(msg: impl Into<String>) -> Self {
        Error::NumericInput(msg.into())
    }

    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
