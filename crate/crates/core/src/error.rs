use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("resolution {resolution} is below the minimum of {minimum}")]
    ResolutionTooSmall { resolution: usize, minimum: usize },

    #[error("pose out of bounds: {0}")]
    PoseOutOfBounds(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A cell or reference region vanished after erosion.
    #[error("undecodable geometry: region {region} is empty after erosion")]
    UndecodableGeometry { region: usize },

    /// The white reference is not brighter than the black reference.
    #[error("decode failure: white reference {white:.4} <= black reference {black:.4}")]
    DecodeFailure { white: f64, black: f64 },

    #[error("forward pass was not recorded for stage {0}")]
    MissingTape(&'static str),

    #[error("non-finite {what} at step {step}")]
    NonFiniteLoss { step: u64, what: &'static str },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dims(expected: (usize, usize), found: (usize, usize)) -> Self {
        Error::ShapeMismatch {
            expected: format!("{}×{}", expected.0, expected.1),
            found: format!("{}×{}", found.0, found.1),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
