use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no data")]
    NoData,
    #[error("empty scan")]
    EmptyScan,
    #[error("altitude unavailable at ({x:.3}, {y:.3})")]
    AltitudeUnavailable { x: f64, y: f64 },
    #[error("insufficient overlap: {0}")]
    InsufficientOverlap(String),
    #[error("resolution mismatch: expected {expected} m/cell, got {got} m/cell")]
    ResolutionMismatch { expected: f64, got: f64 },
    #[error("polar singularity at latitude {0} rad")]
    PolarSingularity(f64),
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("correction too large: |dpsi| = {0} rad")]
    CorrectionTooLarge(f64),
    #[error("covariance ill-conditioned")]
    IllConditioned,
    #[error("geometry deficient: {0}")]
    GeometryDeficient(String),
    #[error("slip detection unavailable: {0} common satellites")]
    SlipDetectionUnavailable(usize),
    #[error("kinematically infeasible trajectory: {0}")]
    Infeasible(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// True for errors caused by malformed or missing inputs, as opposed to
    /// numerical failures inside the estimators.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Format { .. }
                | Error::Config(_)
                | Error::Io(_)
                | Error::InvalidArgument(_)
                | Error::ResolutionMismatch { .. }
                | Error::NoData
                | Error::AltitudeUnavailable { .. }
        )
    }
}
