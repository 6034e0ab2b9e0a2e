use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the detection pipeline.
#[derive(Debug, Error)]
pub enum PsadError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("invalid scene specification: {0}")]
    Spec(String),

    #[error("size constraint violated: {0}")]
    Size(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("training diverged at iteration {iteration}: {term} is not finite")]
    Train { term: &'static str, iteration: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl PsadError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PsadError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        PsadError::Json {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag, used in structured CLI error output.
    pub fn kind(&self) -> &'static str {
        match self {
            PsadError::Io { .. } => "io",
            PsadError::Format(_) => "format",
            PsadError::Spec(_) => "spec",
            PsadError::Size(_) => "size",
            PsadError::Contract(_) => "contract",
            PsadError::Train { .. } => "train",
            PsadError::Config(_) => "config",
            PsadError::Json { .. } => "json",
        }
    }
}

pub type Result<T, E = PsadError> = std::result::Result<T, E>;
