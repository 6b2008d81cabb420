use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("input too short: {0}")]
    InputTooShort(String),
    #[error("numeric degeneracy: {0}")]
    NumericDegeneracy(String),
    #[error("index {index} out of range for size {size}")]
    Index { index: usize, size: usize },
    #[error("usage error: {0}")]
    Usage(String),
    #[error("input length {len} is not a positive multiple of hop {hop}")]
    Alignment { len: usize, hop: usize },
    #[error("format error: {0}")]
    Format(String),
    #[error("corrupt stream: {0}")]
    CorruptStream(String),
    #[error("sequence length {len} exceeds maximum {max}")]
    SequenceLength { len: usize, max: usize },
    #[error("training diverged at step {step}: {detail}")]
    TrainingDivergence { step: usize, detail: String },
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("incompatible configuration: {0}")]
    Compatibility(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
