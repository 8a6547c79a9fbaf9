use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the mapping pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("scan too short: {0} beam(s), at least 2 required")]
    ScanTooShort(usize),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("state error: {0}")]
    State(String),

    #[error("ordering error: timestamp {got} does not follow {previous}")]
    Ordering { previous: f64, got: f64 },

    #[error("unknown node {0}")]
    UnknownNode(String),

    #[error("pose graph is disconnected: nodes {component:?} are unreachable from the gauge node")]
    Disconnected { component: Vec<String> },

    #[error("singular system in pose optimization")]
    Singular,

    #[error("no ground truth: environment has no glass segments")]
    NoGroundTruth,

    #[error("timestamp mismatch at pose {index}: {estimated} vs {truth}")]
    TimestampMismatch {
        index: usize,
        estimated: f64,
        truth: f64,
    },

    #[error("empty map: nothing to export")]
    EmptyMap,

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {}: {source}", path.display())]
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

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Short category name, used by the CLI for exit codes and messages.
    pub fn category(&self) -> &'static str {
        match self {
            Error::ScanTooShort(_) | Error::Domain(_) | Error::InvalidParam(_) => "input",
            Error::State(_) | Error::Ordering { .. } => "state",
            Error::UnknownNode(_) | Error::Disconnected { .. } | Error::Singular => "graph",
            Error::NoGroundTruth | Error::TimestampMismatch { .. } => "evaluation",
            Error::EmptyMap => "export",
            Error::Parse { .. } => "parse",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
