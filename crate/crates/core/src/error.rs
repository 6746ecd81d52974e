use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A tree whose shape disagrees with the variable table.
    #[error("malformed tree: {0}")]
    Structure(String),

    #[error("state does not match the variable table: {0}")]
    Domain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid statistics input: {0}")]
    Stats(String),

    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("{0}")]
    Consistency(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error(
        "enumeration of {pairs} state/action pairs exceeds the cap of {cap}; \
         declare explicit initial states in the problem file"
    )]
    Infeasible { pairs: u128, cap: u128 },

    #[error("cannot sample a transition from terminal state {0:?}; reset first")]
    TerminalState(Vec<usize>),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Validation(_) => 2,
            Error::Convergence { .. } => 3,
            Error::Infeasible { .. } => 4,
            _ => 1,
        }
    }
}
