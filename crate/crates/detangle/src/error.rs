use std::path::PathBuf;

/// Engine-wide error type. Every failure carries enough context to act on
/// (path, line, parameter name) and maps onto a stable process exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("validation failure: {0}")]
    Validation(String),

    #[error("invalid state: {0}")]
    State(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for the CLI: 2 config, 3 io, 4 numeric, 5 validation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. } => 3,
            Error::Numeric(_) | Error::Shape(_) => 4,
            Error::Parse { .. } | Error::Validation(_) | Error::State(_) => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
