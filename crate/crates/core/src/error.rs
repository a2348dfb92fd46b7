use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("{op}: non-finite value")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("variable does not belong to this tape")]
    NotOnTape,

    #[error("backward already ran on this tape; build a fresh tape")]
    BackwardTwice,

    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),

    #[error("expected {expected} input features, got {got}")]
    FeatureWidth { expected: usize, got: usize },

    #[error("label {label} outside 0..{num_classes}")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("{path}: row {row}: {msg}")]
    Csv {
        path: PathBuf,
        row: usize,
        msg: String,
    },

    #[error("data: {0}")]
    Data(String),

    #[error("class `{class}` has {count} row(s); at least {needed} needed")]
    TooFewRows {
        class: String,
        count: usize,
        needed: usize,
    },

    #[error("format: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the error stems from bad input (missing file, malformed data,
    /// invalid config) rather than a failure while computing.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            Error::Csv { .. }
            | Error::Config(_)
            | Error::Format(_)
            | Error::FeatureWidth { .. }
            | Error::Json(_) => true,
            _ => false,
        }
    }
}
