use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("parse error at token {position}: {message}")]
    Parse { position: usize, message: String },

    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Autodiff(#[from] grounder_autodiff::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the failure comes from non-finite arithmetic.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Numeric(_)
                | Error::Autodiff(grounder_autodiff::Error::NonFinite { .. })
                | Error::Autodiff(grounder_autodiff::Error::NonFiniteParameter(_))
        )
    }

    /// Process exit status: 3 for numeric failures, 2 for everything the
    /// caller can fix by changing arguments, config or files.
    pub fn exit_code(&self) -> i32 {
        if self.is_numeric() {
            3
        } else {
            2
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
