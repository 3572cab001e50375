//! Geometry metrics between reconstructed and reference shapes.
//!
//! Distances are plain (not squared) Euclidean distances in scene units.
//! Chamfer distance is the halved symmetric mean of nearest-neighbour
//! distances; normal error is a 3-d nearest-neighbour angular error.

mod normals;
mod surface;

pub use normals::{estimate_normals, normal_error, Normals, DEFAULT_K};
pub use surface::{closest_point_on_triangle, p2s};

use jga_core::KdTree;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("{what}: {points} points but {normals} normals")]
    LengthMismatch {
        what: &'static str,
        points: usize,
        normals: usize,
    },
    #[error("{what} normal {index} is not unit length (norm {norm})")]
    NonUnitNormal {
        what: &'static str,
        index: usize,
        norm: f64,
    },
    #[error("normal estimation with k={k} needs at least {} points, got {n}", k + 1)]
    TooFewPoints { k: usize, n: usize },
    #[error("mesh face {0} is degenerate")]
    DegenerateFace(usize),
    #[error(transparent)]
    Core(#[from] jga_core::CoreError),
}

/// Mean distance from each point of `from` to its nearest neighbour in `to`.
pub fn mean_nearest(from: &[[f64; 3]], to: &KdTree) -> f64 {
    let total: f64 = from
        .par_iter()
        .map(|p| to.nearest(p).map(|(_, d2)| d2.sqrt()).unwrap_or(f64::INFINITY))
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    total / from.len() as f64
}

/// Halved symmetric Chamfer distance.
pub fn chamfer(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64, MetricsError> {
    if a.is_empty() {
        return Err(MetricsError::Empty("first point set"));
    }
    if b.is_empty() {
        return Err(MetricsError::Empty("second point set"));
    }
    let ta = KdTree::new(a);
    let tb = KdTree::new(b);
    Ok(0.5 * (mean_nearest(a, &tb) + mean_nearest(b, &ta)))
}

/// Per-scene evaluation record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub cd: f64,
    pub p2s: f64,
    pub normal_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenes: Vec<(String, SceneMetrics)>,
    pub aggregate: SceneMetrics,
}

impl MetricsReport {
    /// Aggregates by the arithmetic mean of each field.
    pub fn new(scenes: Vec<(String, SceneMetrics)>) -> Self {
        let n = scenes.len().max(1) as f64;
        let sum = |f: fn(&SceneMetrics) -> f64| scenes.iter().map(|(_, m)| f(m)).sum::<f64>() / n;
        let aggregate = SceneMetrics {
            psnr: sum(|m| m.psnr),
            ssim: sum(|m| m.ssim),
            cd: sum(|m| m.cd),
            p2s: sum(|m| m.p2s),
            normal_deg: sum(|m| m.normal_deg),
        };
        Self { scenes, aggregate }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_chamfer() {
        let a = [[0.0, 0.0, 0.0]];
        let b = [[1.0, 0.0, 0.0]];
        assert_eq!(chamfer(&a, &b).unwrap(), 1.0);
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        assert!(chamfer(&a, &[]).is_err());
    }
}
