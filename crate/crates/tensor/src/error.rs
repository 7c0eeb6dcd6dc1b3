use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("buffer of length {len} does not fill shape {shape:?}")]
    BufferLength { shape: Vec<usize>, len: usize },
    #[error("{op}: last dimension has size zero")]
    EmptyLastDim { op: &'static str },
    #[error("model dimension {dim} is not divisible by {heads} heads")]
    HeadMismatch { dim: usize, heads: usize },
    #[error("invalid argument to {op}: {detail}")]
    Invalid { op: &'static str, detail: String },
    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("checkpoint line {line}: {detail}")]
    Checkpoint { line: usize, detail: String },
    #[error("checkpoint io: {0}")]
    Io(String),
}

impl From<std::io::Error> for TensorError {
    fn from(err: std::io::Error) -> Self {
        TensorError::Io(err.to_string())
    }
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::Shape { op, detail: detail.into() }
}
