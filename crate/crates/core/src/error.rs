use std::fmt;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("unbound name `{0}`")]
    Unbound(String),

    #[error("duplicate parameter name `{0}`")]
    DuplicateName(String),

    #[error("non-finite value produced by `{0}`")]
    NonFinite(&'static str),

    #[error("expected a scalar output, got shape {0:?}")]
    NonScalar(Vec<usize>),

    #[error("invalid array: {0}")]
    InvalidArray(String),

    #[error("index {index} out of range for {what} of size {size}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("sample space has {0} points, above the enumeration limit")]
    SpaceTooLarge(u128),

    #[error("operation requires an enumerable discrete space")]
    ContinuousSpace,

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("checkpoint parse error at line {line}: {msg}")]
    Checkpoint { line: usize, msg: String },

    #[error("data format error at line {line}: {msg}")]
    DataFormat { line: usize, msg: String },

    #[error("labeled pool exhausted: {0}")]
    PoolExhausted(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl fmt::Display) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.to_string(),
        }
    }

    pub(crate) fn invalid(msg: impl fmt::Display) -> Self {
        Error::InvalidArgument(msg.to_string())
    }
}
