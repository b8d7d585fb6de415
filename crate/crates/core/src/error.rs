use std::path::PathBuf;

use thiserror::Error;

use crate::timestepper::TrajectoryRecord;

/// Errors produced by the simulator and its verification tooling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("contract violated: {0}")]
    Contract(String),

    /// The state blew up; the partial trajectory up to the last good step is attached.
    #[error("divergence at step {step}: {reason}")]
    Divergence {
        step: usize,
        reason: String,
        seed: u64,
        partial: Box<TrajectoryRecord>,
    },

    #[error("invalid configuration:\n{}", format_violations(.0))]
    Config(Vec<Violation>),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

/// One failed validation rule, located by a dotted key path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub key: String,
    pub message: String,
}

impl Violation {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| format!("  - {x}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
