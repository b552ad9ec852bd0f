use std::path::PathBuf;

use crate::ladder::StepTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}")]
    Diverged {
        epoch: usize,
        history: Vec<crate::training::EpochRecord>,
    },

    #[error("ladder failed at iteration {iteration}: {source}")]
    Ladder {
        iteration: usize,
        #[source]
        source: Box<Error>,
        trace: Vec<StepTrace>,
    },

    #[error("proposal lies entirely outside the image: {0}")]
    OutsideImage(String),

    #[error("invalid data: {0}")]
    Data(String),

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
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Usage,
            Error::NonFinite(_) | Error::Diverged { .. } => ErrorKind::Numerical,
            Error::Ladder { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }
}
