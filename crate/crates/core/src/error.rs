use thiserror::Error;

/// Errors raised by the estimators, the federation harness and the experiment runner.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("no subject at risk at t = {0}")]
    DegenerateRiskSet(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("gaussian calibration requires delta > 0")]
    ZeroDelta,

    #[error("rdp order mismatch: ledger has alpha = {ledger}, got {other}")]
    OrderMismatch { ledger: f64, other: f64 },

    #[error("tabulated baseline hazard is not invertible: {0}")]
    NonInvertibleBaseline(String),

    #[error("server {server} has an empty batch (n = {n}, rounds = {rounds})")]
    EmptyBatch { server: usize, n: usize, rounds: usize },

    #[error("all effective sample sizes are zero")]
    ZeroEffectiveSize,

    #[error("effective sample size {0} is below 2; tree depth would be 0")]
    TreeTooShallow(f64),

    #[error("isolation violation: server {server} round {round}: {reason}")]
    IsolationViolation {
        server: usize,
        round: usize,
        reason: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("io: {0}")]
    Io(String),

    #[error("parse: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
