use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("layout mismatch between parameter vectors")]
    LayoutMismatch,

    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("missing optimizer state for Adam step")]
    MissingOptimizerState,

    #[error("csv error in {path}: {reason}")]
    Csv { path: String, reason: String },

    #[error("parse error at row {row}, column {column}: {value:?} is not numeric")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("unknown label column `{0}`")]
    UnknownColumn(String),

    #[error("plaintext out of range for modulus")]
    PlaintextRange,

    #[error("fixed-point headroom exceeded: |{value}| * {addends} addends does not fit below n/2")]
    Headroom { value: String, addends: usize },

    #[error("ciphertext was produced under a different public key")]
    KeyMismatch,

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("wire format: {0}")]
    Wire(String),

    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("run stalled: {0}")]
    Stalled(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}
