use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, TraceError>;

#[derive(Debug, Error)]
pub enum TraceError {
    /// Tensor extents do not line up for the requested operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// Input outside the mathematical domain of an operation (e.g. log of a non-positive value).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error: {0}")]
    Config(String),

    /// Malformed or inconsistent clickstream data.
    #[error("data error: {0}")]
    Data(String),

    #[error("training error in `{param}`: {detail}")]
    NonFinite { param: String, detail: String },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    /// A required artifact is absent; `hint` names the command that produces it.
    #[error("missing {artifact} at {}: run `{hint}` first", path.display())]
    Missing {
        artifact: String,
        path: PathBuf,
        hint: String,
    },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl TraceError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        TraceError::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        TraceError::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        TraceError::Data(msg.into())
    }
}
