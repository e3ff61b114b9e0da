use thiserror::Error;

/// Errors raised by the geometry, selection and solver layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("point is behind camera {camera} (depth {depth:e})")]
    BehindCamera { camera: usize, depth: f64 },

    #[error("camera index {0} is out of range")]
    InvalidCamera(usize),

    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("base rays are parallel (theta = {0:e})")]
    DegenerateParallax(f64),

    #[error("ill-conditioned reconstruction: {0}")]
    IllConditioned(String),

    #[error("covariance is numerically zero")]
    ZeroCovariance,

    #[error("no valid base pair in track")]
    NoValidPair,

    #[error("track {0} has no base pair selected")]
    MissingBases(usize),

    #[error("damped normal equations not positive definite after {0} damping increases")]
    LinearSolveFailure(usize),

    #[error("no track survived visibility filtering")]
    EmptyProblem,

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
