use thiserror::Error;

/// Errors surfaced by the DIPS core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("kernel too large: n = {n} exceeds dense cap {cap}")]
    DenseCapExceeded { n: usize, cap: usize },

    #[error("exact assignment bound refused: n = {n} exceeds configured cap {cap}")]
    AssignmentCapExceeded { n: usize, cap: usize },

    #[error("ties detected in {0} sample; the rank statistic requires no ties")]
    TiesDetected(&'static str),

    #[error("invalid statistic spec: {0}")]
    InvalidSpec(String),

    #[error("invalid transform spec: {0}")]
    InvalidTransform(String),

    #[error("enumeration cap exceeded: n = {n} > {cap}")]
    EnumerationCapExceeded { n: usize, cap: usize },

    #[error("argument out of range: {0}")]
    ArgumentOutOfRange(String),

    #[error("normalization inconsistency: {0}")]
    Inconsistency(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
