use thiserror::Error;

pub type Result<T> = std::result::Result<T, DgmrfError>;

#[derive(Debug, Error)]
pub enum DgmrfError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite loss at iteration {iteration} (offending term: {term})")]
    NonFinite { iteration: usize, term: String },

    #[error("empty test set")]
    EmptyTestSet,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl DgmrfError {
    /// Stable machine-readable class, printed by the CLI on failure.
    pub fn class(&self) -> &'static str {
        match self {
            DgmrfError::Dimension(_) => "dimension",
            DgmrfError::Parse { .. } => "parse",
            DgmrfError::Convergence { .. } => "convergence",
            DgmrfError::UnsupportedModel(_) => "unsupported-model",
            DgmrfError::InvalidArgument(_) => "invalid-argument",
            DgmrfError::NonFinite { .. } => "non-finite",
            DgmrfError::EmptyTestSet => "empty-test-set",
            DgmrfError::Config(_) => "config",
            DgmrfError::Io(_) => "io",
        }
    }

    /// Process exit code associated with the error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            DgmrfError::Config(_) | DgmrfError::InvalidArgument(_) => 2,
            DgmrfError::Io(_) | DgmrfError::Parse { .. } => 3,
            DgmrfError::Dimension(_) | DgmrfError::EmptyTestSet => 4,
            DgmrfError::Convergence { .. } | DgmrfError::NonFinite { .. } => 5,
            DgmrfError::UnsupportedModel(_) => 6,
        }
    }
}
