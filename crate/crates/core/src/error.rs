use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error at {context}: {message}")]
    Json { context: String, message: String },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("schema error: column `{column}` not found")]
    Schema { column: String },

    #[error("row {row}: {message}")]
    RowValidation { row: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("conversation `{id}` has a single turn and cannot be split")]
    CannotSplit { id: String },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("insufficient responses: need at least {needed}, got {got}")]
    InsufficientResponses { needed: usize, got: usize },

    #[error("backend error from {endpoint} after {attempts} attempt(s): {message}")]
    Backend {
        endpoint: String,
        attempts: u32,
        retryable: bool,
        message: String,
    },

    #[error("sampler pool exhausted after {drawn} draw(s)")]
    PoolExhausted { drawn: usize },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("degenerate (zero-norm) embedding for response {index}")]
    DegenerateEmbedding { index: usize },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("bootstrap aborted: {redraws} degenerate redraws exceeded limit {limit}")]
    TooManyDegenerate { redraws: usize, limit: usize },

    #[error("unmatched conversation ids: {0:?}")]
    UnmatchedIds(Vec<String>),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, err: impl std::fmt::Display) -> Self {
        Error::Json {
            context: context.into(),
            message: err.to_string(),
        }
    }

    /// Short machine-readable tag for the error channel.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
            Error::Csv(_) => "csv",
            Error::Schema { .. } => "schema",
            Error::RowValidation { .. } => "row_validation",
            Error::Validation(_) => "validation",
            Error::CannotSplit { .. } => "cannot_split",
            Error::Input(_) => "input",
            Error::InsufficientResponses { .. } => "insufficient_responses",
            Error::Backend { .. } => "backend",
            Error::PoolExhausted { .. } => "pool_exhausted",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::DegenerateEmbedding { .. } => "degenerate_embedding",
            Error::UndefinedCorrelation(_) => "undefined_correlation",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::TooManyDegenerate { .. } => "too_many_degenerate",
            Error::UnmatchedIds(_) => "unmatched_ids",
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Backend { retryable: true, .. })
    }
}
