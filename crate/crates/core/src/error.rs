use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit reports. Variants are grouped by the stage that
/// raised them so callers (the CLI in particular) can map them onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: malformed row {row}: {message}")]
    MalformedRow {
        context: String,
        row: usize,
        message: String,
    },

    #[error("{context}: row {row}: label `{column}` = {value} outside {range}")]
    LabelOutOfRange {
        context: String,
        row: usize,
        column: &'static str,
        value: i64,
        range: &'static str,
    },

    #[error("{context}: duplicate sample id `{id}` at row {row}")]
    DuplicateId {
        context: String,
        row: usize,
        id: String,
    },

    #[error("sample `{id}`: image {path} could not be read: {message}")]
    Image {
        id: String,
        path: PathBuf,
        message: String,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown task `{0}`")]
    UnknownTask(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown backbone `{name}`; registered: [{}]", registered.join(", "))]
    UnknownBackbone { name: String, registered: Vec<String> },

    #[error("training aborted: {0}")]
    Training(String),

    #[error("evaluation: {0}")]
    Evaluation(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
