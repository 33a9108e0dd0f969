use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the viseme pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("topology mismatch: {0}")]
    Topology(String),

    #[error("duplicate viseme label `{0}`")]
    DuplicateLabel(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("phoneme segments overlap at lines {first} and {second}")]
    Overlap { first: usize, second: usize },

    #[error("unmapped phoneme `{0}`")]
    UnmappedPhoneme(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("vertex behind camera (depth {depth})")]
    BehindCamera { depth: f64 },

    #[error("no rig vertex projects inside the image")]
    AllOutside,

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("numeric failure at frame {frame}: {source}")]
    FrameFailed {
        frame: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the optimizer or the camera model, as opposed to
    /// bad input data.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::BehindCamera { .. } | Error::Numeric(_) | Error::AllOutside => true,
            Error::FrameFailed { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
