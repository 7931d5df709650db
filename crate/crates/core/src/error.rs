//! Crate-wide error type.
//!
//! Variants map onto the CLI exit codes: config/parse problems exit 2,
//! training failures exit 3, solver failures exit 4.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "training failed for seed {seed}: best train accuracy {best_accuracy:.4} \
         below target {target:.4} after {restarts} restarts"
    )]
    Training {
        seed: u64,
        best_accuracy: f64,
        target: f64,
        restarts: usize,
    },

    #[error("solver error: {0}")]
    Solver(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit code the CLI reports for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Training { .. } => 3,
            Error::Solver(_) => 4,
            _ => 2,
        }
    }
}
