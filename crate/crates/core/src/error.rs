use thiserror::Error;

/// Errors produced by the geometry, loss and metric routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("insufficient points: need at least {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("no convergence after {iterations} iterations (relative decrease {relative_decrease:e})")]
    NoConvergence {
        iterations: usize,
        relative_decrease: f64,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("point behind camera (z = {0})")]
    BehindCamera(f64),
    #[error("size components must be positive")]
    NonPositiveSize,
    #[error("scale must be positive")]
    NonPositiveScale,
    #[error("uncertainty must be positive on masked pixels")]
    NonPositiveSigma,
    #[error("row {0} has (near) zero norm")]
    ZeroNormRow(usize),
    #[error("point set is empty")]
    EmptySet,
    #[error("input is empty")]
    EmptyInput,
    #[error("need at least 2 keypoints, got {0}")]
    TooFewKeypoints(usize),
    #[error("no anchor has a positive pair")]
    NoValidAnchors,
    #[error("row {0} is not unit norm")]
    NotNormalized(usize),
    #[error("no point projects into the image")]
    NothingVisible,
    #[error("invalid value: {0}")]
    InvalidValue(String),
}

pub type Result<T, E = GeomError> = std::result::Result<T, E>;
