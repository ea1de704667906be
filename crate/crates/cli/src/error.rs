use std::path::PathBuf;

use cat_core::CatError;
use thiserror::Error;

/// Failures of a CLI command. Configuration and schema problems map to exit
/// code 2, everything else to 1.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Schema(String),
    #[error("{}: file not found", .0.display())]
    MissingFile(PathBuf),
    #[error("{path}: {source}", path = .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed JSON: {source}", path = .path.display())]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("missing artifact {}: {hint}", .path.display())]
    MissingArtifact { path: PathBuf, hint: String },
    #[error(transparent)]
    Core(#[from] CatError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Schema(_) | CliError::MissingFile(_) | CliError::Parse { .. } => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingFile(path)
        } else {
            CliError::Io { path, source }
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
