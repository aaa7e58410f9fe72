//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Cloud has no spatial extent (all points identical).
    #[error("zero extent: all points identical")]
    ZeroExtent,

    /// `look_at` with an up vector parallel to the view direction.
    #[error("degenerate basis: up vector parallel to view direction")]
    DegenerateBasis,

    #[error("invalid frustum: {0}")]
    InvalidFrustum(String),

    /// Projection of a point with non-positive clip w.
    #[error("behind camera")]
    BehindCamera,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Every local anchor in the batch was masked out.
    #[error("no valid correspondences in batch")]
    NoValidAnchors,

    #[error("non-finite loss at step {step} (objects {objects:?})")]
    NonFiniteLoss { step: usize, objects: Vec<String> },

    #[error("config mismatch on resume: {0}")]
    ConfigMismatch(String),

    /// A checkpoint without head tensors was given where heads are needed.
    #[error("heads required: checkpoint contains no projection heads")]
    HeadsRequired,

    #[error("io error ({path}): {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }
}
