use thiserror::Error;

/// Errors surfaced by every layer of the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent model or layer configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Bad argument or out-of-contract input data.
    #[error("input error: {0}")]
    Input(String),

    /// Density fitting could not complete (e.g. too few samples for a class).
    #[error("fitting error: {0}")]
    Fit(String),

    /// Operation called on an object in the wrong state.
    #[error("state error: {0}")]
    State(String),

    /// Model is degenerate for the requested operation (e.g. identical class gradients).
    #[error("degenerate model: {0}")]
    Degenerate(String),

    /// Malformed binary file; `offset` is the byte position where parsing failed.
    #[error("format error in {path} at offset {offset}: {msg}")]
    Format {
        path: String,
        offset: u64,
        msg: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
