use chrono::{DateTime, Utc};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmotionError {
    #[error("{axis} coordinate {value} is outside [0, 100]")]
    OutOfRange { axis: &'static str, value: f64 },
    #[error("grid cell (col {col}, row {row}) is outside the 8x8 grid")]
    InvalidCell { col: u8, row: u8 },
    #[error("flat grid index {0} is outside 0..63")]
    InvalidFlatIndex(u8),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FactorError {
    #[error("unknown factor `{0}`")]
    UnknownFactor(String),
    #[error("value {value} for factor `{factor_id}` is outside its canonical range")]
    OutOfRange { factor_id: String, value: f64 },
    #[error("value kind does not match the declared kind of factor `{0}`")]
    KindMismatch(String),
    #[error("factor `{0}` is declared more than once")]
    DuplicateFactor(String),
    #[error("factor `{0}` has an empty or inverted canonical range")]
    InvalidRange(String),
    #[error("registry document is invalid: {0}")]
    Config(String),
}

/// Failures of the retrieval → personalization → prediction pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("history is empty")]
    EmptyHistory,
    #[error("no history is available to fall back on")]
    NoHistoryFallbackImpossible,
    #[error("factor `{0}` has no usable history")]
    InactiveFactor(String),
    #[error("cluster is empty")]
    EmptyCluster,
    #[error("check-in at {at} is not later than the last stored check-in at {last}")]
    OutOfOrderCheckIn {
        at: DateTime<Utc>,
        last: DateTime<Utc>,
    },
    #[error("unknown user `{0}`")]
    UnknownUser(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error(transparent)]
    Factor(#[from] FactorError),
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("input is empty")]
    EmptyFile,
    #[error("header is missing column `{0}`")]
    MissingHeader(String),
    #[error("malformed calendar: {0}")]
    MalformedCalendar(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid document: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error("user `{user}`: check-ins are not strictly time-ordered")]
    Unordered { user: String },
}
