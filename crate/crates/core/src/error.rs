use std::path::PathBuf;

/// Errors produced anywhere in the relighting and editing pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed image data: {0}")]
    Format(String),
    #[error("truncated data: {0}")]
    Truncated(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing capability: {0}")]
    Capability(String),
    #[error("checkpoint version mismatch: {0}")]
    Version(String),
    #[error("corrupt data: {0}")]
    Corrupt(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
