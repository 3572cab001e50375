use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::voxel::Coord;

/// Dense latent volume of side `resolution` with `channels` features per cell
/// and a separate occupancy value in `[0, 1]`.
///
/// Cells are laid out with `k` fastest: `cell = (i * r + j) * r + k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentGrid {
    pub resolution: usize,
    pub channels: usize,
    pub features: Vec<f64>,
    pub occupancy: Vec<f64>,
}

impl LatentGrid {
    pub fn new(resolution: usize, channels: usize, features: Vec<f64>, occupancy: Vec<f64>) -> Result<Self, CoreError> {
        let cells = resolution * resolution * resolution;
        if features.len() != cells * channels || occupancy.len() != cells {
            return Err(CoreError::Shape(format!(
                "latent grid r={resolution} F={channels} expects {} features and {cells} occupancies, got {} and {}",
                cells * channels,
                features.len(),
                occupancy.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite("latent features"));
        }
        if occupancy.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(CoreError::Invalid("occupancy must lie in [0, 1]".into()));
        }
        Ok(Self {
            resolution,
            channels,
            features,
            occupancy,
        })
    }

    pub fn zeros(resolution: usize, channels: usize) -> Self {
        let cells = resolution.pow(3);
        Self {
            resolution,
            channels,
            features: vec![0.0; cells * channels],
            occupancy: vec![0.0; cells],
        }
    }

    pub fn cells(&self) -> usize {
        self.resolution.pow(3)
    }

    #[inline]
    pub fn cell_index(&self, c: Coord) -> usize {
        let r = self.resolution;
        (c[0] as usize * r + c[1] as usize) * r + c[2] as usize
    }

    #[inline]
    pub fn coord_of(&self, cell: usize) -> Coord {
        let r = self.resolution;
        [(cell / (r * r)) as i32, ((cell / r) % r) as i32, (cell % r) as i32]
    }

    pub fn cell_features(&self, cell: usize) -> &[f64] {
        &self.features[cell * self.channels..(cell + 1) * self.channels]
    }

    /// Interleaved diffusion state: `channels` features followed by occupancy, per cell.
    pub fn to_state(&self) -> Vec<f64> {
        let f = self.channels;
        let mut out = Vec::with_capacity(self.cells() * (f + 1));
        for cell in 0..self.cells() {
            out.extend_from_slice(self.cell_features(cell));
            out.push(self.occupancy[cell]);
        }
        out
    }

    /// Inverse of [`LatentGrid::to_state`]; occupancy is clamped into `[0, 1]`.
    pub fn from_state(resolution: usize, channels: usize, state: &[f64]) -> Result<Self, CoreError> {
        let cells = resolution.pow(3);
        if state.len() != cells * (channels + 1) {
            return Err(CoreError::Shape(format!(
                "state of length {} does not match r={resolution} F={channels}",
                state.len()
            )));
        }
        let mut features = Vec::with_capacity(cells * channels);
        let mut occupancy = Vec::with_capacity(cells);
        for chunk in state.chunks_exact(channels + 1) {
            features.extend_from_slice(&chunk[..channels]);
            occupancy.push(chunk[channels].clamp(0.0, 1.0));
        }
        Self::new(resolution, channels, features, occupancy)
    }

    pub fn occupied(&self, threshold: f64) -> usize {
        self.occupancy.iter().filter(|o| **o > threshold).count()
    }
}
