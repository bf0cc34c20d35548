use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error(transparent)]
    Transport(#[from] TransportError),

    #[error("episode aborted at step {step}: {source}")]
    EpisodeAborted {
        step: usize,
        #[source]
        source: TransportError,
        partial: Box<crate::trainer::Trajectory>,
    },

    #[error("training aborted: {0}")]
    Training(String),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Failures talking to an agent backend.
#[derive(Debug, Error)]
pub enum TransportError {
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },

    #[error("request failed after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },

    #[error("request rejected (HTTP {status}): {body}")]
    Rejected { status: u16, body: String },

    #[error("malformed response: {0}")]
    Malformed(String),

    #[error("missing credential: environment variable {0} is not set")]
    MissingCredential(String),

    #[error("no recorded response for request {0}")]
    CassetteMiss(String),

    #[error("backend failure: {0}")]
    Backend(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
