use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A file did not parse as the expected format (bad magic, header or length).
    #[error("format error: {0}")]
    Format(String),

    /// Inputs parsed but violate a documented contract.
    #[error("validation error: {0}")]
    Validation(String),

    /// The predictor peer sent something that is not a well-formed frame.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// The predictor handshake failed (wrong protocol name or version).
    #[error("handshake error: {0}")]
    Handshake(String),

    /// The predictor connection broke. Safe to retry on a fresh connection.
    #[error("transport error: {0}")]
    Transport(String),

    #[error("predictor timed out after {0:?}")]
    Timeout(std::time::Duration),

    /// The backend answered a request with an explicit error frame.
    #[error("predictor error for request {id}: {message}")]
    Predictor { id: u64, message: String },

    /// An internal invariant did not hold.
    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }

    /// Process exit code for this error class, as used by the CLI.
    ///
    /// `0` success, `2` validation, `3` protocol, `4` predictor timeout. I/O and
    /// other failures use `1`.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Format(_) | Error::Validation(_) => 2,
            Error::Protocol(_) | Error::Handshake(_) | Error::Predictor { .. } => 3,
            Error::Transport(_) => 3,
            Error::Timeout(_) => 4,
            Error::Internal(_) | Error::Io(_) => 1,
        }
    }

    /// Whether retrying on a new connection may succeed.
    pub fn is_retriable(&self) -> bool {
        matches!(self, Error::Transport(_) | Error::Timeout(_))
    }
}
