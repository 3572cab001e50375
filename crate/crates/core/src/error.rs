use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("channel layout error: expected at least {expected} channels, got {got}")]
    Layout { expected: usize, got: usize },
    #[error("resolution {0} is not a positive power of two")]
    Resolution(usize),
    #[error("coordinate {coord:?} outside grid of side {grid}")]
    CoordinateRange { coord: [i32; 3], grid: usize },
    #[error("duplicate coordinate {0:?}")]
    DuplicateCoordinate([i32; 3]),
    #[error("position {position:?} of gaussian {index} lies outside bounds [{min}, {max}]")]
    OutOfBounds {
        index: usize,
        position: [f64; 3],
        min: f64,
        max: f64,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// Non-fatal conditions an operation reports alongside a valid result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Warning {
    /// Thresholding selected no cells.
    EmptySelection,
    /// Prediction and ground truth share no active voxel.
    EmptyIntersection,
    /// Every voxel was pruned.
    AllPruned,
    /// Every Gaussian was culled by the camera.
    AllCulled,
    /// A depth map produced no points.
    EmptyCloud,
    /// No mesh vertex is visible from the camera.
    NoVisibleVertices,
}

/// A result value paired with an optional warning the caller should inspect.
#[derive(Debug, Clone, PartialEq)]
#[must_use]
pub struct Flagged<T> {
    pub value: T,
    pub warning: Option<Warning>,
}

impl<T> Flagged<T> {
    pub fn ok(value: T) -> Self {
        Self { value, warning: None }
    }

    pub fn warn(value: T, warning: Warning) -> Self {
        Self {
            value,
            warning: Some(warning),
        }
    }

    pub fn is_flagged(&self) -> bool {
        self.warning.is_some()
    }

    pub fn into_inner(self) -> T {
        self.value
    }
}
