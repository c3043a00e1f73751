use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid CSR structure: {0}")]
    InvalidCsr(String),

    /// A Cholesky pivot fell at or below the pivot tolerance.
    #[error("breakdown: pivot {index} is {pivot:e} (tolerance {tolerance:e})")]
    Breakdown {
        index: usize,
        pivot: f64,
        tolerance: f64,
    },

    #[error("zero diagonal entry at {0} in triangular factor")]
    ZeroDiagonal(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A plan failed to deliver a row that a rank requires.
    #[error("rank {rank} is missing row {row} after plan execution")]
    MissingRow { rank: usize, row: usize },

    /// A message carried a row its sender did not hold at that phase.
    #[error("rank {rank} cannot send row {row}: not held at phase {phase}")]
    RowNotHeld {
        rank: usize,
        row: usize,
        phase: usize,
    },

    #[error("non-conformal reduction buffers: rank {rank} has {got} values, expected {expected}")]
    Conformance {
        rank: usize,
        expected: usize,
        got: usize,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
