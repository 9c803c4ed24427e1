use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("xml syntax error at byte {offset}: {message}")]
    Xml { offset: usize, message: String },

    #[error("annotation error in <{element}>: {message}")]
    Annotation { element: String, message: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty library: no object survived the filter rules")]
    EmptyLibrary,

    #[error("integrity error in {}: {message}", path.display())]
    Integrity { path: PathBuf, message: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {}: {message}", path.display())]
    Image { path: PathBuf, message: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-positive depth {0} mm")]
    NonPositiveDepth(f64),

    #[error("singular homography")]
    SingularHomography,

    #[error("schedule has only {completed} completed cycles, {requested} requested")]
    TooFewCycles { completed: usize, requested: usize },

    #[error("training diverged at step {step}: {reason}")]
    Divergence { step: usize, reason: String },

    #[error("occluder id {id} out of bounds for library of {len}")]
    IdOutOfBounds { id: usize, len: usize },

    #[error("frame mismatch: {0}")]
    FrameMismatch(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Image {
            path: path.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn integrity(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Integrity {
            path: path.into(),
            message: message.into(),
        }
    }
}
