use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A state object violates its own invariants (non-finite ψ, bad step size, ...).
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// An argument is outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid reward: {0}")]
    InvalidReward(String),

    /// A gradient or loss went non-finite while processing `task`.
    #[error("numerical failure in task {task}: {detail}")]
    Numerical { task: String, detail: String },

    #[error("usage error: {0}")]
    Usage(String),

    /// Configuration problem. `line` is 1-based when the source location is known.
    #[error("{}", fmt_config(.path, .line, .message))]
    Config {
        path: Option<PathBuf>,
        line: Option<usize>,
        message: String,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn fmt_config(path: &Option<PathBuf>, line: &Option<usize>, message: &str) -> String {
    match (path, line) {
        (Some(p), Some(l)) => format!("config error at {}:{l}: {message}", p.display()),
        (Some(p), None) => format!("config error in {}: {message}", p.display()),
        (None, Some(l)) => format!("config error at line {l}: {message}"),
        (None, None) => format!("config error: {message}"),
    }
}

impl Error {
    pub fn config(message: impl Into<String>) -> Self {
        Error::Config {
            path: None,
            line: None,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for this error: 2 for configuration problems,
    /// 3 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Usage(_) | Error::Parse(_) => 2,
            Error::Numerical { .. } | Error::InvalidReward(_) | Error::InvalidState(_) => 3,
            _ => 1,
        }
    }
}
