use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] gamba_autodiff::Error),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("I/O error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {} at offset {offset}: {msg}", path.display())]
    Parse { path: PathBuf, offset: usize, msg: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("usage error: {0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, offset: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            offset,
            msg: msg.into(),
        }
    }

    /// Process exit code: 1 usage/configuration, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) => 1,
            Error::Io { .. } | Error::Parse { .. } | Error::Degenerate(_) => 2,
            Error::Numerical(_) => 3,
            Error::Tensor(gamba_autodiff::Error::NonFinite { .. }) => 3,
            Error::Tensor(gamba_autodiff::Error::Usage(_)) => 1,
            Error::Tensor(gamba_autodiff::Error::Shape { .. }) => 3,
        }
    }
}
