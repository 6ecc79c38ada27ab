use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("config error: {0}")]
    Config(String),

    /// A formula was evaluated outside its domain (e.g. division by `1 - alpha_bar = 0`).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("transport failure: {0}")]
    Transport(String),

    #[error("protocol version mismatch: expected {expected}, got {actual}")]
    ProtocolVersion { expected: u16, actual: u16 },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("payload size mismatch: expected {expected} bytes, got {actual}")]
    PayloadSize { expected: u64, actual: u64 },

    #[error("worker error: {0}")]
    Worker(String),

    #[error("estimator failed at step {step}: {source}")]
    Estimator {
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn parse(offset: u64, msg: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: msg.into(),
        }
    }

    /// The innermost error, looking through step context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Estimator { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures of the byte stream to a remote worker.
    pub fn is_transport(&self) -> bool {
        matches!(self.root(), Error::Transport(_))
    }
}
