use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record at line {line}: {reason}")]
    Ingest { line: usize, reason: String },

    #[error("conflicting records for doc_id {doc_id:?}: same id, different text")]
    Conflict { doc_id: String },

    #[error("invalid spec: {0}")]
    Spec(String),

    #[error("capacity exceeded: requested {requested} random negatives but only {available} free combinations")]
    Capacity { requested: usize, available: usize },

    #[error("integrity error: pair ({resume_id}, {vacancy_id}) {reason}")]
    Integrity {
        resume_id: String,
        vacancy_id: String,
        reason: String,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("pooling strategy error: {0}")]
    Strategy(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("degenerate test: {0}")]
    DegenerateTest(String),

    #[error("index build failed for document {doc_id:?}: {reason}")]
    IndexBuild { doc_id: String, reason: String },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable name for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Ingest { .. } => "ingest",
            Error::Conflict { .. } => "conflict",
            Error::Spec(_) => "spec",
            Error::Capacity { .. } => "capacity",
            Error::Integrity { .. } => "integrity",
            Error::Shape(_) => "shape",
            Error::Config(_) => "config",
            Error::Strategy(_) => "strategy",
            Error::EmptyInput(_) => "empty_input",
            Error::Fit(_) => "fit",
            Error::Training(_) => "training",
            Error::Divergence { .. } => "divergence",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::DegenerateTest(_) => "degenerate_test",
            Error::IndexBuild { .. } => "index_build",
            Error::Format(_) => "format",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
