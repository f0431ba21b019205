use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid weight matrix: {0}")]
    InvalidWeight(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("inconsistent structure: {0}")]
    Structure(String),
    #[error("surrogate anchors differ")]
    AnchorMismatch,
    #[error("block {block} has no closed-form subproblem: {reason}")]
    UnsupportedSubproblem { block: usize, reason: String },
    #[error(
        "iterates diverged at iteration {iteration} (last finite objective {last_objective}, residual {last_residual})"
    )]
    Divergence { iteration: usize, last_objective: f64, last_residual: f64 },
    #[error("internal consistency violated: {0}")]
    InternalConsistency(String),
    #[error("theorem assumption violated: {0}")]
    AssumptionViolation(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            Error::Io(e.to_string())
        } else {
            Error::Parse(e.to_string())
        }
    }
}
