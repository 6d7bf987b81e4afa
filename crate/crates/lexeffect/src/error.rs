use thiserror::Error;

/// Errors produced by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite feature value at row {row}")]
    NonFiniteFeature { row: usize },

    #[error("control word {word:?} not in sentence {sentence_id:?}")]
    ControlWordMissing { word: String, sentence_id: String },

    #[error("no OOB trees for training index {0}")]
    NoOobTrees(usize),

    #[error("no valid trees for causal estimate")]
    NoValidTrees,

    #[error("empty {0} group")]
    EmptyGroup(&'static str),

    #[error("unknown estimator {0:?}")]
    UnknownEstimator(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("variant {0:?} has no valid ratings")]
    UncoveredVariant(String),

    #[error("no worker pairs with a defined correlation")]
    NoAgreementPairs,

    #[error("estimator coverage mismatch: {missing} tuples missing for {estimator}")]
    CoverageMismatch { estimator: String, missing: usize },

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("unsupported format version {0}")]
    FormatVersion(u32),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
