use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed JSON: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid JSON in {what}: {source}")]
    Json {
        what: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("document {doc_id}: invalid {field}: {message}")]
    Validation {
        doc_id: String,
        field: String,
        message: String,
    },

    #[error("split: {0}")]
    Split(String),

    #[error("index {index} out of range for sequence of length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("length mismatch: {features} feature vectors vs {tags} tags")]
    LengthMismatch { features: usize, tags: usize },

    #[error("cannot decode an empty sequence")]
    EmptySequence,

    #[error("claim {claim_id}: gold tag sequence is not BIO-valid")]
    InvalidTags { claim_id: String },

    #[error("invalid span [{start}, {end}) for text of length {len}")]
    InvalidSpan { start: usize, end: usize, len: usize },

    #[error("training: {0}")]
    Training(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("prompt exceeds {limit} characters ({actual}) after truncation")]
    PromptTooLong { limit: usize, actual: usize },

    #[error("transient service error: {0}")]
    Transient(String),

    #[error("service error: {0}")]
    Service(String),

    #[error("claim ids differ between predictions and gold: {0}")]
    ClaimMismatch(String),

    #[error("{0} already exists (use --force to overwrite)")]
    Exists(PathBuf),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(what: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            what: what.into(),
            source,
        }
    }

    pub(crate) fn validation(
        doc_id: &str,
        field: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Validation {
            doc_id: doc_id.to_string(),
            field: field.into(),
            message: message.into(),
        }
    }

    /// Whether retrying the same request may succeed.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Transient(_))
    }
}
