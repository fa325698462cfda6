use thiserror::Error;

pub type Result<T> = std::result::Result<T, FreresError>;

#[derive(Debug, Error)]
pub enum FreresError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value at frame {frame}, row {row}, col {col}, dim {dim}")]
    NonFiniteValue {
        frame: usize,
        row: usize,
        col: usize,
        dim: usize,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("truncated file: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },

    #[error("i/o failure")]
    Io(#[from] std::io::Error),

    #[error("invalid budget: {0}")]
    InvalidBudget(String),

    #[error("budget too small: {0}")]
    BudgetTooSmall(String),

    #[error("group {0} has no P-frames")]
    EmptyGop(usize),

    #[error("compression ratio undefined for zero compressed tokens")]
    DivisionDomain,

    #[error("missing weights: {0}")]
    MissingWeights(String),

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

impl FreresError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        FreresError::ShapeMismatch(msg.into())
    }

    /// Coarse classification used by the CLI to pick an exit code.
    pub fn category(&self) -> ErrorCategory {
        match self {
            FreresError::Io(_) => ErrorCategory::Io,
            FreresError::InvalidBudget(_)
            | FreresError::BudgetTooSmall(_)
            | FreresError::DivisionDomain => ErrorCategory::Budget,
            _ => ErrorCategory::Validation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Validation,
    Budget,
    Io,
}
