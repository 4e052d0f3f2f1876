use thiserror::Error;

/// Errors raised by the solver toolkit.
#[derive(Debug, Error)]
pub enum ElsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation error in {field}: {message}")]
    Validation { field: String, message: String },

    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),

    #[error("problem is infeasible: {0}")]
    Infeasible(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("no feasible point found after {restarts} restarts")]
    NoFeasiblePoint { restarts: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl ElsError {
    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        ElsError::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = ElsError> = std::result::Result<T, E>;
