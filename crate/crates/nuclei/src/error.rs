use std::path::{Path, PathBuf};

/// Error carrying the process exit code it maps to.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad flags or config contents (exit 1).
    #[error("{0}")]
    Usage(String),
    /// Missing, unreadable or malformed input (exit 2).
    #[error("{0}")]
    Data(String),
    /// Training diverged or a gradient check failed (exit 3).
    #[error("{0}")]
    Numerical(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Data(_) => 2,
            Error::Numerical(_) => 3,
        }
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        Error::Data(format!("{}: {err}", path.display()))
    }
}

impl From<nuclei_core::Error> for Error {
    fn from(err: nuclei_core::Error) -> Self {
        use nuclei_core::Error as E;
        let mut inner = &err;
        while let E::Stage { source, .. } = inner {
            inner = source;
        }
        match inner {
            E::NonFiniteLoss { .. } => Error::Numerical(err.to_string()),
            E::InvalidArgument { .. } => Error::Usage(err.to_string()),
            _ => Error::Data(err.to_string()),
        }
    }
}

/// Attaches a path to IO results.
pub trait Context<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T, E: std::fmt::Display> Context<T> for std::result::Result<T, E> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|e| Error::io(&path.into(), e))
    }
}
