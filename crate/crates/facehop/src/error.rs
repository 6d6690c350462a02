use std::path::PathBuf;

use crate::format::FormatError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] facehop_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: cannot decode image: {message}", path.display())]
    Image { path: PathBuf, message: String },
    #[error("{}:{line}: {message}", path.display())]
    Manifest { path: PathBuf, line: u64, message: String },
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Model { path: PathBuf, source: FormatError },
    #[error("{0}")]
    Usage(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn manifest(path: impl Into<PathBuf>, line: u64, message: impl Into<String>) -> Self {
        Error::Manifest { path: path.into(), line, message: message.into() }
    }

    /// Process exit status: 1 validation, 2 I/O, 3 corrupt model.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Core(_) | Error::Manifest { .. } | Error::Config(_) | Error::Usage(_) => 1,
            Error::Io { .. } | Error::Image { .. } => 2,
            Error::Model { .. } => 3,
        }
    }
}
