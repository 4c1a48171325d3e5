use thiserror::Error;

/// Errors produced anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: expected {expected:?}, got {actual:?}")]
    Shape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("internal consistency error: {0}")]
    Consistency(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("length error: expected {expected} bytes, got {actual}")]
    Length { expected: usize, actual: usize },

    #[error("unsupported version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },

    #[error("key error: {0}")]
    Key(String),

    #[error("key exhaustion: need {required} key bits but only {available} available; run additional QKD sessions")]
    KeyExhaustion { required: usize, available: usize },

    #[error("QKD session {session_id} aborted; no key material")]
    SessionAborted { session_id: u64 },

    #[error("integrity tag mismatch (expected {expected:#018x}, got {actual:#018x})")]
    Tamper { expected: u64, actual: u64 },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("security alert: {0}")]
    Security(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
