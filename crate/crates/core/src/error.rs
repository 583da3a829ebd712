use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters or configuration.
    #[error("invalid parameter: {0}")]
    Param(String),

    /// Input data that cannot support the requested computation.
    #[error("data error: {0}")]
    Data(String),

    /// An iterative or linear-algebra routine failed.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("replicate {rep} of band {band}: {source}")]
    Replicate {
        band: usize,
        rep: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn param(msg: impl Into<String>) -> Self {
        Error::Param(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Param(_) => ErrorKind::Config,
            Error::Data(_) | Error::Io { .. } | Error::Format { .. } => ErrorKind::Data,
            Error::Numeric(_) => ErrorKind::Numeric,
            Error::Replicate { source, .. } => source.kind(),
        }
    }

    /// Exit code convention of the command-line tool: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numeric => 4,
        }
    }
}
