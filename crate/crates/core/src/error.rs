use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("config key `{key}`: {detail}")]
    Config { key: String, detail: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: {detail}")]
    Wav { path: PathBuf, detail: String },

    #[error("checkpoint (format v{version}): {detail}")]
    Checkpoint { version: u32, detail: String },

    #[error("numeric failure at step {step}: {detail}")]
    Numeric { step: u64, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            detail: detail.into(),
        }
    }

    /// Process exit code for the command-line driver: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::Numeric { .. } => 4,
            Error::Shape { .. } | Error::InvalidArgument { .. } => 4,
            Error::Data(_)
            | Error::Wav { .. }
            | Error::Checkpoint { .. }
            | Error::Io(_)
            | Error::Json(_) => 3,
        }
    }
}
