use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point depth {0} is at or behind the camera plane")]
    NonPositiveDepth(f64),
    #[error("inverse depth {0} is not positive")]
    NonPositiveInverseDepth(f64),
    #[error("sample location ({x}, {y}) falls outside the image")]
    OutOfBounds { x: f64, y: f64 },
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("edge weight {value} at index {index} is negative or not finite")]
    NegativeWeight { index: usize, value: f64 },
    #[error("matrix is not positive definite (pivot {pivot} at column {column})")]
    NotPositiveDefinite { column: usize, pivot: f64 },
    #[error("factorization failed: {0}")]
    FactorizationFailure(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("mask selects no pixels")]
    EmptyMask,
    #[error("prediction list is empty")]
    EmptyPredictionList,
    #[error("upsampling weights are not convex at output pixel {index} (sum {sum}, min {min})")]
    NonConvexWeights { index: usize, sum: f64, min: f64 },
    #[error("degenerate scene: {0}")]
    DegenerateScene(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}
