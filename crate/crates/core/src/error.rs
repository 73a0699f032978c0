use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Mismatched shapes or invalid layer/model configuration.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate batch: batch-norm needs at least 2 samples per channel, got {0}")]
    DegenerateBatch(usize),

    /// An operation was invoked out of order (e.g. backward before a train-mode forward).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("input size error: {0}")]
    InputSize(String),

    #[error("region {region} is out of bounds for a {height}x{width} image")]
    Bounds {
        region: String,
        height: usize,
        width: usize,
    },

    #[error("weight file format error in `{tensor}`: {message}")]
    Format { tensor: String, message: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("image error for {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(tensor: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            tensor: tensor.into(),
            message: message.into(),
        }
    }
}
