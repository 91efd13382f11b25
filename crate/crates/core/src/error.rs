use alloc::string::String;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("loss variant {variant} does not accept these parameters: {reason}")]
    Structure { variant: &'static str, reason: String },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("box is not ordered (x1 <= x2, y1 <= y2 required): {0:?}")]
    UnorderedBox([f64; 4]),

    #[error("dataset contains no positive samples")]
    NoPositiveSamples,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("non-finite model parameters after epoch {epoch}")]
    NonFiniteModel { epoch: usize },

    #[error("average precision is undefined without ground truth")]
    NoGroundTruth,

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
