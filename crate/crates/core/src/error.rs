use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("attention row {row} invalid: {reason}")]
    InvalidAttention { row: usize, reason: String },

    #[error("label matrix invalid at row {row}: {reason}")]
    InvalidLabels { row: usize, reason: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("unknown token `{0}`")]
    UnknownToken(String),

    #[error("event at t={got:.3}s arrived after t={last:.3}s")]
    OutOfOrder { last: f64, got: f64 },

    #[error("session already closed")]
    SessionClosed,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
