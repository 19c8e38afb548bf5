use std::path::PathBuf;

use serde::Serialize;

/// Failures of the file formats and the command pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] ccc_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing artifact: {0}")]
    MissingArtifact(&'static str),
    #[error("missing path for `{key}`: {path} does not exist")]
    MissingPath { key: &'static str, path: PathBuf },
    #[error("checkpoint version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("config: {0}")]
    Config(String),
    #[error("classifier changed during {0}")]
    ClassifierModified(&'static str),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Stable identifier used in error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Core(_) => "core",
            Error::Io { .. } => "io",
            Error::MissingArtifact(_) => "missing_artifact",
            Error::MissingPath { .. } => "missing_path",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::Format { .. } => "format",
            Error::Config(_) => "config",
            Error::ClassifierModified(_) => "classifier_modified",
        }
    }

    pub fn record(&self) -> ErrorRecord {
        ErrorRecord {
            error: ErrorBody {
                kind: self.kind(),
                message: self.to_string(),
            },
        }
    }
}

/// What a failed command prints on stderr, one JSON object per line.
#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub error: ErrorBody,
}

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub kind: &'static str,
    pub message: String,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
