use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {dim} is {actual}, expected {expected}")]
    ShapeMismatch {
        op: &'static str,
        dim: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("invalid geometry for {op}: {reason}")]
    InvalidGeometry { op: &'static str, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("negative variance {value} in channel {channel}")]
    NegativeVariance { channel: usize, value: f32 },

    #[error("manifest schema error at {location}: {reason}")]
    Schema { location: String, reason: String },

    #[error("layer {layer}: parameter `{name}` does not exist in the weight store")]
    DanglingBlob { layer: usize, name: String },

    #[error("layer {layer}: parameter `{name}` has shape {actual:?}, expected {expected:?}")]
    BlobShape {
        layer: usize,
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("blob `{name}` contains a non-finite value at element {index}")]
    NonFinite { name: String, index: usize },

    #[error("malformed weight blob at byte {offset}: {reason}")]
    Blob { offset: usize, reason: String },

    #[error("layer {layer} ({kind}): {reason}")]
    Layer {
        layer: usize,
        kind: &'static str,
        reason: String,
    },

    #[error("mask error: {0}")]
    Mask(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(
        op: &'static str,
        dim: impl Into<String>,
        expected: usize,
        actual: usize,
    ) -> Self {
        Error::ShapeMismatch {
            op,
            dim: dim.into(),
            expected,
            actual,
        }
    }
}
