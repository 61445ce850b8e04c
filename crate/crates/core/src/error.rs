use thiserror::Error;

/// Errors raised anywhere in the rating pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("horizon not covered: {0}")]
    HorizonNotCovered(String),

    #[error("out-of-time split impossible: {0}")]
    OutOfTimeSplitImpossible(String),

    #[error("empty feature matrix")]
    EmptyFeatureMatrix,

    #[error("keep-list conflict: {0}")]
    KeepListConflict(String),

    #[error("degenerate training data: {0}")]
    Degenerate(String),

    #[error("feature mismatch: {0}")]
    FeatureMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("calibration did not converge: {0}")]
    NonConvergence(String),

    #[error("no feasible rating scale: {0}")]
    Infeasible(String),

    #[error("inconsistent amounts: {0}")]
    InconsistentAmounts(String),

    #[error("insufficient history for lookback features: {}", .0.join(", "))]
    InsufficientHistory(Vec<String>),

    #[error("all pairs tied")]
    AllPairsTied,

    #[error("no discordant pairs")]
    NoDiscordantPairs,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
