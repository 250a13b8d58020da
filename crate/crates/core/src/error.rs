use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid layout: {0}")]
    Layout(String),

    #[error("beam budget S={served} out of range for M={antennas} antennas")]
    BudgetOutOfRange { antennas: usize, served: usize },

    #[error("no budget S_j(L) configured for base station {bs} at cluster size {size}")]
    MissingBudget { bs: usize, size: usize },

    #[error("empty cluster")]
    EmptyCluster,

    #[error("users with no positive-rate candidate: {0:?}")]
    OrphanUsers(Vec<usize>),

    #[error("optimization problem has no variables")]
    EmptyProblem,

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("allocation does not match problem layout: {0}")]
    Mismatch(String),

    #[error("oracle instance too large: {0}")]
    OracleTooLarge(String),

    #[error("degenerate channel: {0}")]
    Degenerate(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
