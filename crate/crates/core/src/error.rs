use thiserror::Error;

pub type Result<T> = std::result::Result<T, NmceError>;

#[derive(Debug, Error)]
pub enum NmceError {
    #[error("{op}: shape mismatch, {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("row_normalize: row {row} has near-zero norm {norm:e}")]
    ZeroRow { row: usize, norm: f64 },

    #[error("cholesky: matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config: {0}")]
    Config(String),

    #[error("numerical abort at step {step}: {detail}")]
    NumericalAbort { step: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl NmceError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        NmceError::InvalidArgument(msg.into())
    }
}
