use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised anywhere in the forecasting pipeline.
///
/// The type is `Clone` so cached evaluation results (which may hold an error)
/// can be handed out to several concurrent readers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("timestamps are not strictly increasing (duplicate at {0})")]
    NonMonotoneTimestamps(i64),
    #[error("negative throughput {value} at row {row}")]
    NegativeThroughput { row: usize, value: f64 },
    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("io error: {0}")]
    Io(String),
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("trace of length {len} is too short, need at least {needed}")]
    TraceTooShort { len: usize, needed: usize },
    #[error("invalid split ratios: {0}")]
    InvalidSplitRatios(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("quantile level {0} is outside (0, 1)")]
    InvalidTau(f64),
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("feature layout mismatch: model expects {expected}, got {actual}")]
    LayoutMismatch { expected: String, actual: String },
    #[error("invalid backbone parameters: {0}")]
    InvalidParams(String),
    #[error("prediction batch is empty")]
    EmptyBatch,
    #[error("invalid prediction batch: {0}")]
    InvalidBatch(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("scale grid is empty")]
    EmptyGrid,
    #[error("invalid risk budget: {0}")]
    InvalidRiskConfig(String),
    #[error("candidate evaluation failed at tau={tau}: {message}")]
    EvaluatorFailure { tau: f64, message: String },
    #[error("per-service bandwidth must be positive, got {0}")]
    InvalidBandwidth(f64),
    #[error("admission reports cover different slots")]
    SlotMismatch,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("epsilon sweep is empty")]
    EmptySweep,
    #[error("malformed model file: {0}")]
    ModelFormat(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at_stage(self, stage: &'static str) -> Error {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.at_stage(stage))
    }
}
