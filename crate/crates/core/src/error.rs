use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("non-finite loss term `{term}` at iteration {iteration}")]
    NonFinite { term: &'static str, iteration: u64 },
    #[error("cosine similarity undefined for a zero-norm embedding")]
    UndefinedSimilarity,
    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),
    #[error("corrupt dataset: {0}")]
    CorruptDataset(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("image encoding: {0}")]
    Image(String),
}

impl Error {
    /// Short machine-readable kind, used in CLI error documents.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Numeric(_) => "numeric-error",
            Error::NonFinite { .. } => "non-finite-loss",
            Error::UndefinedSimilarity => "undefined-similarity",
            Error::InvalidCheckpoint(_) => "invalid-checkpoint",
            Error::CorruptDataset(_) => "corrupt-dataset",
            Error::Config(_) => "invalid-config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Image(_) => "image",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
