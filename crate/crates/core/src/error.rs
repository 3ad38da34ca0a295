use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm {0:e} is below the normalization floor")]
    NearZeroNorm(f64),
    #[error("empty input")]
    EmptyInput,
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("bad dimension: {0}")]
    BadDimension(String),
    #[error("finite-difference step {0:e} outside [1e-7, 1e-3]")]
    InvalidStep(f64),
    #[error("function evaluation was not finite at coordinate {0}")]
    NonFiniteEvaluation(usize),
    #[error("latent dimension {have} too small for {need} mutually orthogonal directions")]
    DimensionTooSmall { have: usize, need: usize },
    #[error("invalid class counts: train={train}, test={test}")]
    InvalidClassCounts { train: usize, test: usize },
    #[error("invalid smoothing coefficient {0} (need 0 <= sigma < 1)")]
    InvalidSigma(f64),
    #[error("index {index} out of range for {len} classes")]
    BadIndex { index: usize, len: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("label row {0} has zero mass")]
    ZeroRow(usize),
    #[error("orthogonality regularizer needs at least two classes")]
    SingleClass,
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error("split violation: {0}")]
    SplitViolation(String),
    #[error("empty logits")]
    EmptyLogits,
    #[error("feature bank has {bank} rows, k={k}")]
    BankTooSmall { bank: usize, k: usize },
    #[error("zero vector at index {0}")]
    ZeroVector(usize),
    #[error("class {0} has no samples")]
    ClassWithNoSamples(usize),
    #[error("config error: {0}")]
    Config(String),
    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(PathBuf),
    #[error("gradient check failed: worst relative error {worst:e} in {block}")]
    GradCheckFailure { block: String, worst: f64 },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Json(_)
            | Error::Csv(_)
            | Error::Io { .. }
            | Error::MissingCheckpoint(_)
            | Error::SplitViolation(_)
            | Error::DimensionTooSmall { .. }
            | Error::InvalidClassCounts { .. }
            | Error::InvalidSigma(_)
            | Error::BadDimension(_) => 2,
            Error::GradCheckFailure { .. } => 4,
            _ => 3,
        }
    }
}
