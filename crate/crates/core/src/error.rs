use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("fixed point not reached after {0} iterations")]
    NotConverged(usize),
    #[error("verification failed at index {index}: {detail}")]
    VerificationFailed { index: usize, detail: String },
    #[error("transmission requested with bucket level {level}, need at least {needed}")]
    InsufficientTokens { level: i64, needed: i64 },
    #[error("state is not in terminal set S_{0}")]
    NotInTerminalSet(usize),
    #[error("LMI problem is infeasible (best margin {0:.3e})")]
    SdpInfeasible(f64),
    #[error("MPC problem infeasible at step {0}")]
    InfeasibleProblem(usize),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
