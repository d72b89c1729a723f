//! Crate-wide error type.
//!
//! Every fallible operation in this crate returns [`Error`]. The variants map
//! onto the CLI exit codes: invalid input (2), I/O (3), numeric failure (4).

use thiserror::Error;

/// Errors produced by filter construction, training, data handling and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// Cutoff parameters outside their admissible domain.
    #[error("parameter domain: {0}")]
    ParamDomain(String),

    /// Invalid filter specification (even length, bad window, bad rate).
    #[error("filter spec: {0}")]
    Spec(String),

    /// Mismatched vector/matrix dimensions.
    #[error("shape: {0}")]
    Shape(String),

    /// Invalid experiment or dataset configuration.
    #[error("config: {0}")]
    Config(String),

    /// Malformed file content (WAV chunks, manifests, checkpoints).
    #[error("format: {0}")]
    Format(String),

    /// Argument outside the documented domain of an operation.
    #[error("domain: {0}")]
    Domain(String),

    /// Class label outside the configured range.
    #[error("label: {0}")]
    Label(String),

    /// Non-finite value encountered during computation.
    #[error("numeric: {0}")]
    Numeric(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// CLI exit code for this error: 2 invalid input, 3 I/O, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 4,
            Error::Io(_) => 3,
            Error::ParamDomain(_)
            | Error::Spec(_)
            | Error::Shape(_)
            | Error::Config(_)
            | Error::Format(_)
            | Error::Domain(_)
            | Error::Label(_)
            | Error::Json(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
