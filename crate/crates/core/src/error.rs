use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("weights not normalized: sum = {sum}")]
    NotNormalized { sum: f64 },

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    /// Raised when an exponentiation leaves the representable range. Usually
    /// means epsilon is too small for the scale of the cost matrix.
    #[error("numerical overflow in {block}: dynamic range [{min:e}, {max:e}] (log scale); epsilon may be too small for the cost scale")]
    Overflow {
        block: &'static str,
        min: f64,
        max: f64,
    },

    #[error("problem size {size} exceeds the exact solver cap of {cap} atoms per side")]
    CapExceeded { size: usize, cap: usize },

    #[error("network simplex did not converge within {0} pivots")]
    PivotLimit(usize),

    #[error("malformed kernel sample file at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
