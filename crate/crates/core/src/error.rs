//! Error type shared across the engine.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("data length {got} does not match shape element count {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },

    #[error("filter {filter}x{fw} larger than padded input {in_h}x{in_w}", fw = .filter_w)]
    FilterTooLarge {
        filter: usize,
        filter_w: usize,
        in_h: usize,
        in_w: usize,
    },

    #[error("no layer named {0:?} in model")]
    UnknownLayer(String),

    #[error("duplicate layer name {0:?}")]
    DuplicateLayerName(String),

    #[error("malformed one-hot label in row {row}")]
    MalformedOneHot { row: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}: training diverged")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("split ratios {0:?} do not sum to 1")]
    BadRatios((f64, f64, f64)),

    #[error("class folder {0:?} is empty")]
    EmptyClass(String),

    #[error("no class subdirectories under {0}")]
    NoClasses(PathBuf),

    #[error("destination collision: {0} already exists")]
    DestinationCollision(PathBuf),

    #[error("failed to decode {path}: {source}")]
    ImageDecode {
        path: PathBuf,
        source: image::ImageError,
    },

    #[error("failed to encode image: {0}")]
    ImageEncode(image::ImageError),

    #[error("confusion matrix is empty (total = 0)")]
    EmptyConfusion,

    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },

    #[error("truth and prediction lengths differ: {truth} vs {pred}")]
    UnpairedPredictions { truth: usize, pred: usize },

    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },

    #[error("{0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
