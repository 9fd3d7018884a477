use thiserror::Error;

pub type Result<T, E = OdError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum OdError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("invalid value: {0}")]
    Domain(String),

    #[error("duplicate entry for {0}")]
    DuplicateKey(String),

    #[error("unknown station `{0}`")]
    UnknownStation(String),

    #[error("missing distance for pair {from} -> {to}")]
    MissingPair { from: String, to: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e}): {context}")]
    Convergence {
        iterations: usize,
        residual: f64,
        context: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl OdError {
    /// True for failures of the numerical procedures, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, OdError::Infeasible(_) | OdError::Convergence { .. })
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        OdError::Domain(msg.into())
    }
}
