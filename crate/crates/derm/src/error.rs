use std::path::{Path, PathBuf};

use derm_core::Error as CoreError;

/// Everything a command can fail with; each kind has a fixed exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Divergence(String),
    #[error("{0}")]
    Checkpoint(String),
    #[error("gradient check failed: {0}")]
    GradCheck(String),
    #[error("{0}")]
    Internal(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Divergence(_) => 4,
            CliError::Checkpoint(_) => 5,
            CliError::GradCheck(_) => 6,
            CliError::Internal(_) => 1,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    /// Tags a core error with the file it came from.
    pub fn at(path: &Path, e: CoreError) -> Self {
        match CliError::from(e) {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            CliError::Checkpoint(m) => CliError::Checkpoint(format!("{}: {m}", path.display())),
            CliError::Internal(m) => CliError::Internal(format!("{}: {m}", path.display())),
            CliError::Io { source, .. } => CliError::io(path, source),
            other => other,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::Config(_) | CoreError::Label(_) | CoreError::Data(_) => CliError::Config(msg),
            CoreError::Image(_) => CliError::Io {
                path: PathBuf::new(),
                source: std::io::Error::new(std::io::ErrorKind::InvalidData, msg),
            },
            CoreError::Divergence { .. } | CoreError::NonFinite { .. } => CliError::Divergence(msg),
            CoreError::BadMagic
            | CoreError::Version(_)
            | CoreError::Checksum { .. }
            | CoreError::Malformed(_)
            | CoreError::ShapeMismatch { .. }
            | CoreError::MissingTensor(_) => CliError::Checkpoint(msg),
            _ => CliError::Internal(msg),
        }
    }
}
