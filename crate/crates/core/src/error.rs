use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("index out of range: {what} = {index}, bound {bound}")]
    Bounds {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unsupported operation: {0}")]
    Unsupported(&'static str),

    #[error("enumeration budget exceeded: {required} leaves required, budget is {budget}")]
    Budget { required: u128, budget: u128 },

    #[error("conditional undefined: {0}")]
    UndefinedConditional(String),

    #[error("non-finite value detected: {0}")]
    NonFinite(String),

    #[error("estimator norm {norm} exceeds bound {bound}")]
    NormBound { norm: f64, bound: f64 },

    #[error("environment misuse: {0}")]
    Env(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn bounds(what: &'static str, index: usize, bound: usize) -> Self {
        Error::Bounds { what, index, bound }
    }
}
