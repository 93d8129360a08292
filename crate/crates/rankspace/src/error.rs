use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("rank {rank} out of range 0..={max}")]
    InvalidRank { rank: usize, max: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Input is structurally valid but admits no meaningful answer
    /// (e.g. proportional allocation with all importances zero).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    /// An objective evaluator failed; carries the rank vector that was
    /// being evaluated.
    #[error("evaluator failed at ranks {ranks:?}: {source}")]
    EvaluatorFailure {
        ranks: Vec<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error("combination count {count} exceeds cap {cap}")]
    CapExceeded { count: u128, cap: u128 },

    #[error("budget {budget} below minimal achievable weight {min_weight}")]
    InfeasibleBudget { budget: u64, min_weight: u64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    /// Wrap an evaluator error together with the offending rank vector.
    pub fn at_ranks(self, ranks: &[usize]) -> Self {
        Error::EvaluatorFailure {
            ranks: ranks.to_vec(),
            source: Box::new(self),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
