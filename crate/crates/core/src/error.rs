use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, AuditError>;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("line {line}: malformed triple: {reason}")]
    MalformedTriple { line: usize, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unknown triple format `{0}` (expected tsv3 or kgtk)")]
    UnknownFormat(String),

    #[error("future birth date: born {birth_year}, reference year {reference_year}")]
    FutureBirthDate { birth_year: i32, reference_year: i32 },

    #[error("empty geography `{0}`: no human entities matched the filter rules")]
    EmptyGeography(String),

    #[error("no eligible occupations for attribute {0}")]
    NoEligibleOccupations(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("diverged; reduce learning rate (loss = {0})")]
    Diverged(f64),

    #[error("missing embedding row for `{0}`")]
    MissingEmbedding(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("missing country attributes for geography `{0}`")]
    MissingAttributes(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl AuditError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AuditError::Io {
            path: path.into(),
            source,
        }
    }
}
