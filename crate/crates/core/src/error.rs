use thiserror::Error;

/// Errors produced by the glimpse pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("glimpse at ({gx}, {gy}) does not fit inside a {width}x{height} image")]
    OutOfBounds {
        gx: usize,
        gy: usize,
        width: usize,
        height: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("history is inconsistent with every world entry")]
    InconsistentHistory,

    #[error("model error: {0}")]
    Model(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("storage error: {0}")]
    Storage(String),

    #[error("completion failed at step {step}: {source}")]
    Completion {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
