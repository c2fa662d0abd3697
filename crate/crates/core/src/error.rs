use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {op} got {left:?} and {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("structural error in block starting at line {line}: {msg}")]
    Structure { line: usize, msg: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("coverage error: missing vector for sentence {sentence_id:?} token {token_index}")]
    Coverage { sentence_id: String, token_index: usize },

    #[error("capacity error: K={k} exceeds the {available} retrievable entries")]
    Capacity { k: usize, available: usize },

    #[error("build error: {0}")]
    Build(String),

    #[error("compatibility error: {0}")]
    Compatibility(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown strategy {name:?} for {kind}; known: {known}")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        known: String,
    },

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {value}")]
    NonFiniteLoss { epoch: usize, batch: usize, value: f64 },

    #[error("gradient check failed at index {index}: {msg}")]
    GradientCheck { index: usize, msg: String },

    #[error("dump error: {0}")]
    Dump(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    /// True for failures of the numeric pipeline (as opposed to bad data or usage).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteLoss { .. } | Error::GradientCheck { .. } | Error::Domain(_)
        )
    }
}
