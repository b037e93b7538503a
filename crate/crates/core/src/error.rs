use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Geometry(#[from] geometry::GeometryError),
    #[error(transparent)]
    Numeric(#[from] numcore::NumError),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CoreError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, message: impl std::fmt::Display) -> Self {
        CoreError::File {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Whether the error stems from user input (paths, configuration,
    /// contracts) rather than an internal failure.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            CoreError::Config(_) | CoreError::Contract(_) | CoreError::Geometry(geometry::GeometryError::Contract(_))
        )
            || matches!(self, CoreError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound)
            || matches!(self, CoreError::Geometry(geometry::GeometryError::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound)
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
