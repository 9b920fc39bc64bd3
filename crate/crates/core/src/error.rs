use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage an error surfaced in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Input,
    Annotate,
    Cot,
    CotParse,
    Compose,
    Segment,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Input => "input",
            Stage::Annotate => "annotate",
            Stage::Cot => "cot",
            Stage::CotParse => "cot-parse",
            Stage::Compose => "compose",
            Stage::Segment => "segment",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Coarse error classes, used by front-ends to pick exit codes and HTTP statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad configuration, unreadable inputs.
    Usage,
    /// A precondition on an argument was violated.
    InvalidArgument,
    /// The model produced output that does not follow the expected protocol.
    Protocol,
    /// A backend could not be reached or failed.
    Backend,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("transcript format error after {attempts} attempt(s): {reason}")]
    TranscriptFormat {
        reason: String,
        /// Last raw model output that failed to parse.
        raw: String,
        attempts: u32,
    },

    #[error("backend {backend} failed: {message}")]
    Backend { backend: String, message: String },

    #[error("no replay fixture for request {hash}")]
    FixtureMissing { hash: String },

    #[error("control protocol error: {0}")]
    ControlProtocol(String),

    #[error("waldo protocol error: {0}")]
    WaldoProtocol(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("image error: {0}")]
    Image(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("[{stage}] {source}")]
    Staged {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn backend(backend: impl Into<String>, message: impl fmt::Display) -> Self {
        Error::Backend {
            backend: backend.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }

    /// Wraps the error with a stage label unless it already carries one.
    pub fn at(self, stage: Stage) -> Self {
        match self {
            Error::Staged { .. } => self,
            other => Error::Staged {
                stage,
                source: Box::new(other),
            },
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Staged { stage, .. } => Some(*stage),
            _ => None,
        }
    }

    /// The error without its stage label.
    pub fn root(&self) -> &Error {
        match self {
            Error::Staged { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self.root() {
            Error::Config(_) | Error::Manifest(_) | Error::Image(_) | Error::Io { .. } => {
                ErrorKind::Usage
            }
            Error::InvalidArgument(_) => ErrorKind::InvalidArgument,
            Error::TranscriptFormat { .. } | Error::ControlProtocol(_) | Error::WaldoProtocol(_) => {
                ErrorKind::Protocol
            }
            Error::Backend { .. } | Error::FixtureMissing { .. } => ErrorKind::Backend,
            Error::Staged { .. } => unreachable!("root() strips stage labels"),
        }
    }
}
