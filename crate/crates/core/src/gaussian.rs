use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::sigmoid;

/// Axis-aligned cube `[min, max]³` holding a scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub min: f64,
    pub max: f64,
}

impl Default for Cube {
    fn default() -> Self {
        Self { min: -1.0, max: 1.0 }
    }
}

impl Cube {
    pub fn new(min: f64, max: f64) -> Result<Self, CoreError> {
        if !(min.is_finite() && max.is_finite() && max > min) {
            return Err(CoreError::Invalid(format!("degenerate cube [{min}, {max}]")));
        }
        Ok(Self { min, max })
    }

    pub fn side(&self) -> f64 {
        self.max - self.min
    }

    pub fn contains(&self, p: &[f64; 3]) -> bool {
        p.iter().all(|&x| x >= self.min && x <= self.max)
    }
}

/// One 3D Gaussian primitive.
///
/// Scale is stored as per-axis log standard deviation and opacity as a
/// pre-sigmoid logit; the rotation quaternion `(w, x, y, z)` may be
/// unnormalized and is normalized on use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianAttributes {
    pub position: [f64; 3],
    pub color: [f64; 3],
    pub log_scale: [f64; 3],
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
}

impl Default for GaussianAttributes {
    fn default() -> Self {
        Self {
            position: [0.0; 3],
            color: [0.5; 3],
            log_scale: [(0.01f64).ln(); 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_logit: 0.0,
        }
    }
}

impl GaussianAttributes {
    pub fn scale(&self) -> [f64; 3] {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    /// Unit quaternion; a zero quaternion maps to the identity rotation.
    pub fn unit_rotation(&self) -> [f64; 4] {
        let n = self.rotation.iter().map(|q| q * q).sum::<f64>().sqrt();
        if n < 1e-12 || !n.is_finite() {
            [1.0, 0.0, 0.0, 0.0]
        } else {
            self.rotation.map(|q| q / n)
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position
            .iter()
            .chain(&self.color)
            .chain(&self.log_scale)
            .chain(&self.rotation)
            .chain(std::iter::once(&self.opacity_logit))
            .all(|v| v.is_finite())
    }
}

/// Unordered collection of Gaussians inside a bounding cube.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GaussianSet {
    pub gaussians: Vec<GaussianAttributes>,
    pub bounds: Cube,
}

impl GaussianSet {
    /// Builds a set, rejecting non-finite attributes and out-of-bounds positions.
    pub fn new(gaussians: Vec<GaussianAttributes>, bounds: Cube) -> Result<Self, CoreError> {
        for (index, g) in gaussians.iter().enumerate() {
            if !g.is_finite() {
                return Err(CoreError::NonFinite("gaussian attributes"));
            }
            if !bounds.contains(&g.position) {
                return Err(CoreError::OutOfBounds {
                    index,
                    position: g.position,
                    min: bounds.min,
                    max: bounds.max,
                });
            }
        }
        Ok(Self { gaussians, bounds })
    }

    pub fn empty(bounds: Cube) -> Self {
        Self {
            gaussians: Vec::new(),
            bounds,
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.gaussians.iter().map(|g| g.position).collect()
    }
}
