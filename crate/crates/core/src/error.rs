use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not symmetric: |A[{row}][{col}] - A[{col}][{row}]| = {asymmetry:e}")]
    Asymmetric { row: usize, col: usize, asymmetry: f64 },

    #[error("singular or ill-conditioned matrix (condition estimate {condition:e})")]
    Singular { condition: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("syntax error at byte {offset}: expected {}", expected.join(" or "))]
    Syntax { offset: usize, expected: Vec<String> },

    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },

    #[error("variable x{index} at byte {offset} exceeds system dimension {dim}")]
    VariableIndex { index: usize, dim: usize, offset: usize },

    #[error("domain error evaluating `{expr}`")]
    Domain { expr: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("trajectory diverged at t = {time} (left the safety box)")]
    Diverged { time: f64 },

    #[error("hypotheses not certified: {0}")]
    NotCertified(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Syntax { .. }
            | Error::UnknownIdentifier { .. }
            | Error::VariableIndex { .. }
            | Error::DimensionMismatch(_)
            | Error::InvalidInput(_)
            | Error::Io(_) => 1,
            Error::NotCertified(_) => 3,
            _ => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::Asymmetric { .. } => "asymmetric",
            Error::Singular { .. } => "singular_matrix",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::Syntax { .. } => "syntax",
            Error::UnknownIdentifier { .. } => "unknown_identifier",
            Error::VariableIndex { .. } => "variable_index",
            Error::Domain { .. } => "domain",
            Error::NonFinite(_) => "non_finite",
            Error::Config(_) => "config",
            Error::Diverged { .. } => "diverged",
            Error::NotCertified(_) => "not_certified",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
