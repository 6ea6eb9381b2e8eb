use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("index {index} out of range 0..{len}")]
    Index { index: usize, len: usize },

    #[error("non-finite value produced in layer {layer}")]
    NonFinite { layer: usize },

    #[error("non-finite training loss at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("feature extraction failed for sample {sample_id} at t={t}: {source}")]
    Extraction {
        sample_id: u64,
        t: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("stale cache: expected spec hash {expected}, found {found}")]
    StaleCache { expected: String, found: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("pipeline error: {0}")]
    Pipeline(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by non-finite arithmetic.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::NonFinite { .. } | Error::Diverged { .. } => true,
            Error::Extraction { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Param(msg.into()))
}

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}
