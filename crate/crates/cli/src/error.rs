use thiserror::Error;

/// CLI failure, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("solver error: {0}")]
    Solver(mmadmm::Error),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    /// 1 config, 2 solver, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Solver(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<mmadmm::Error> for CliError {
    fn from(e: mmadmm::Error) -> Self {
        match e {
            mmadmm::Error::Io(m) | mmadmm::Error::Parse(m) => CliError::Io(m),
            other => CliError::Solver(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
