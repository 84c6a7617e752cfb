use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("image {height}x{width} too small: {reason}")]
    ImageTooSmall {
        height: usize,
        width: usize,
        reason: String,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid scale ratio {0}")]
    InvalidRatio(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("resize factor {factor:.6} for image {side} gives dimension {dim} (< {min})")]
    ResizeTooSmall {
        side: usize,
        factor: f64,
        dim: usize,
        min: usize,
    },
    #[error("non-overlapping pair: V1 = {v1}, V2 = {v2}")]
    NoOverlap { v1: usize, v2: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("manifest {path}:{line}: {msg}")]
    Manifest {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image codec error on {path}: {source}")]
    Codec {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
