use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty series")]
    EmptySeries,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("length must be a power of two (got {0})")]
    NotPowerOfTwo(usize),
    #[error("cannot shrink by alignment ({from} > {to})")]
    CannotShrink { from: usize, to: usize },
    #[error("signal too short: {len} samples, need at least {need}")]
    SignalTooShort { len: usize, need: usize },
    #[error("incompatible MSSI geometry: {0}")]
    Geometry(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("signal '{source_id}': {message}")]
    Signal { source_id: String, message: String },
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
