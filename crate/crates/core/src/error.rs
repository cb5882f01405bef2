use std::path::PathBuf;

/// Errors produced by the loss, metric, fitting and IO routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("point cloud needs at least two points")]
    SinglePoint,
    #[error("non-finite coordinate at point {point}, axis {axis}")]
    NonFiniteCoordinate { point: usize, axis: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("size mismatch: {pred} prediction points vs {gt} ground-truth points")]
    SizeMismatch { pred: usize, gt: usize },
    #[error("input of {n} points exceeds the supported maximum of {max}")]
    TooLarge { n: usize, max: usize },
    #[error("nearest-neighbor assignment changes when perturbing point {point}, axis {axis}")]
    AssignmentUnstable { point: usize, axis: usize },
    #[error("loss became non-finite at iteration {iteration}")]
    DivergedLoss { iteration: usize },
    #[error("parse error in {path}: {location}: {message}")]
    Parse {
        path: PathBuf,
        location: String,
        message: String,
    },
    #[error("unsupported file format: {0}")]
    UnknownFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Input,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidParams(_) | Error::SizeMismatch { .. } | Error::TooLarge { .. } => ErrorClass::Usage,
            Error::EmptyCloud
            | Error::SinglePoint
            | Error::NonFiniteCoordinate { .. }
            | Error::Parse { .. }
            | Error::UnknownFormat(_)
            | Error::Io(_) => ErrorClass::Input,
            Error::AssignmentUnstable { .. } | Error::DivergedLoss { .. } => ErrorClass::Numerical,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParams(msg.into())
    }
}
