//! Sparse voxel tensors and conversions to and from Gaussian sets.
//!
//! Voxelized Gaussians use a fixed attribute layout per active voxel:
//! sub-voxel offset (3), RGB (3), log-scale (3), quaternion (4) and opacity
//! logit (1). Extra channels, when configured, follow and are zero-filled.

use std::ops::Range;

use crate::error::{CoreError, Flagged, Warning};
use crate::gaussian::{Cube, GaussianAttributes, GaussianSet};
use crate::latent::LatentGrid;

pub type Coord = [i32; 3];

pub mod layout {
    use super::Range;

    pub const OFFSET: Range<usize> = 0..3;
    pub const COLOR: Range<usize> = 3..6;
    pub const LOG_SCALE: Range<usize> = 6..9;
    pub const ROTATION: Range<usize> = 9..13;
    pub const OPACITY: usize = 13;
    pub const BASE_CHANNELS: usize = 14;
}

// Positions within this distance below a voxel boundary snap onto it, so that
// devoxelized positions re-voxelize into the same cell despite rounding.
const SNAP: f64 = 1e-9;
const MAX_OFFSET: f64 = 1.0 - 1e-12;

/// Coordinates plus per-coordinate features over a cubic grid.
///
/// `resolution` is the side of the full-resolution grid; `stride` is the
/// tensor's downsampling factor, so coordinates lie in `[0, resolution / stride)`.
/// Coordinates are unique and kept in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVoxelTensor {
    resolution: usize,
    stride: usize,
    channels: usize,
    coords: Vec<Coord>,
    features: Vec<f64>,
}

pub fn is_power_of_two(n: usize) -> bool {
    n > 0 && n & (n - 1) == 0
}

impl SparseVoxelTensor {
    /// Validates and canonicalizes (sorts) the coordinate list.
    pub fn new(
        resolution: usize,
        stride: usize,
        channels: usize,
        coords: Vec<Coord>,
        features: Vec<f64>,
    ) -> Result<Self, CoreError> {
        if !is_power_of_two(resolution) {
            return Err(CoreError::Resolution(resolution));
        }
        if !is_power_of_two(stride) || stride > resolution {
            return Err(CoreError::Invalid(format!(
                "stride {stride} must be a power of two no larger than {resolution}"
            )));
        }
        if features.len() != coords.len() * channels {
            return Err(CoreError::Shape(format!(
                "{} coordinates with {channels} channels need {} features, got {}",
                coords.len(),
                coords.len() * channels,
                features.len()
            )));
        }
        let grid = (resolution / stride) as i32;
        if let Some(c) = coords.iter().find(|c| c.iter().any(|&x| x < 0 || x >= grid)) {
            return Err(CoreError::CoordinateRange {
                coord: *c,
                grid: grid as usize,
            });
        }
        let sorted = coords.windows(2).all(|w| w[0] < w[1]);
        let (coords, features) = if sorted {
            (coords, features)
        } else {
            let mut order: Vec<usize> = (0..coords.len()).collect();
            order.sort_by_key(|&i| coords[i]);
            let mut c2 = Vec::with_capacity(coords.len());
            let mut f2 = Vec::with_capacity(features.len());
            for &i in &order {
                c2.push(coords[i]);
                f2.extend_from_slice(&features[i * channels..(i + 1) * channels]);
            }
            if let Some(w) = c2.windows(2).find(|w| w[0] == w[1]) {
                return Err(CoreError::DuplicateCoordinate(w[0]));
            }
            (c2, f2)
        };
        Ok(Self {
            resolution,
            stride,
            channels,
            coords,
            features,
        })
    }

    /// Builds a tensor from coordinates already sorted and unique.
    ///
    /// Only checked in debug builds; used by hot paths that produce
    /// canonical coordinate lists by construction.
    pub fn from_sorted(
        resolution: usize,
        stride: usize,
        channels: usize,
        coords: Vec<Coord>,
        features: Vec<f64>,
    ) -> Self {
        debug_assert!(coords.windows(2).all(|w| w[0] < w[1]));
        debug_assert_eq!(features.len(), coords.len() * channels);
        Self {
            resolution,
            stride,
            channels,
            coords,
            features,
        }
    }

    pub fn empty(resolution: usize, stride: usize, channels: usize) -> Self {
        Self {
            resolution,
            stride,
            channels,
            coords: Vec::new(),
            features: Vec::new(),
        }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Side length of the grid the coordinates index into.
    pub fn grid_size(&self) -> usize {
        self.resolution / self.stride
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn features_mut(&mut self) -> &mut [f64] {
        &mut self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.channels..(i + 1) * self.channels]
    }

    pub fn index_of(&self, c: &Coord) -> Option<usize> {
        self.coords.binary_search(c).ok()
    }

    /// Same coordinates with a new feature matrix.
    pub fn with_features(&self, channels: usize, features: Vec<f64>) -> Result<Self, CoreError> {
        if features.len() != self.coords.len() * channels {
            return Err(CoreError::Shape(format!(
                "replacement features have length {}, expected {}",
                features.len(),
                self.coords.len() * channels
            )));
        }
        Ok(Self {
            channels,
            features,
            coords: self.coords.clone(),
            ..*self
        })
    }

    /// Reinterprets the coordinates at another (resolution, stride) with the same grid size.
    pub fn with_geometry(mut self, resolution: usize, stride: usize) -> Result<Self, CoreError> {
        if !is_power_of_two(resolution) || !is_power_of_two(stride) || resolution / stride != self.grid_size() {
            return Err(CoreError::Shape(format!(
                "cannot view grid of side {} as resolution {resolution} stride {stride}",
                self.grid_size()
            )));
        }
        self.resolution = resolution;
        self.stride = stride;
        Ok(self)
    }

    pub fn into_parts(self) -> (Vec<Coord>, Vec<f64>) {
        (self.coords, self.features)
    }
}

/// Distinct floor-divided coordinates, sorted.
pub fn downsample_coords(coords: &[Coord], factor: i32) -> Vec<Coord> {
    let mut out: Vec<Coord> = coords.iter().map(|c| c.map(|x| x.div_euclid(factor))).collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Cell index and sub-voxel offset of `p` in a grid of side `grid` over `bounds`.
pub fn locate(p: &[f64; 3], bounds: &Cube, grid: usize) -> (Coord, [f64; 3]) {
    let mut coord = [0i32; 3];
    let mut offset = [0.0; 3];
    let last = grid as f64 - 1.0;
    for a in 0..3 {
        let u = (p[a] - bounds.min) / bounds.side() * grid as f64;
        let idx = (u + SNAP).floor().clamp(0.0, last);
        coord[a] = idx as i32;
        offset[a] = (u - idx).clamp(0.0, MAX_OFFSET);
    }
    (coord, offset)
}

/// Voxelizes with the 14-channel attribute layout.
pub fn voxelize(set: &GaussianSet, resolution: usize) -> Result<SparseVoxelTensor, CoreError> {
    voxelize_with_channels(set, resolution, layout::BASE_CHANNELS)
}

/// Maps each Gaussian to the voxel containing it. When several Gaussians
/// share a voxel the most opaque one is kept (first wins on ties).
pub fn voxelize_with_channels(
    set: &GaussianSet,
    resolution: usize,
    channels: usize,
) -> Result<SparseVoxelTensor, CoreError> {
    if !is_power_of_two(resolution) {
        return Err(CoreError::Resolution(resolution));
    }
    if channels < layout::BASE_CHANNELS {
        return Err(CoreError::Layout {
            expected: layout::BASE_CHANNELS,
            got: channels,
        });
    }
    let mut winners: Vec<(Coord, [f64; 3], usize)> = Vec::with_capacity(set.len());
    for (i, g) in set.gaussians.iter().enumerate() {
        if !set.bounds.contains(&g.position) {
            return Err(CoreError::OutOfBounds {
                index: i,
                position: g.position,
                min: set.bounds.min,
                max: set.bounds.max,
            });
        }
        let (c, off) = locate(&g.position, &set.bounds, resolution);
        winners.push((c, off, i));
    }
    // stable sort keeps input order within a voxel
    winners.sort_by_key(|w| w.0);
    let mut coords = Vec::new();
    let mut features = Vec::new();
    let mut start = 0;
    while start < winners.len() {
        let mut end = start + 1;
        while end < winners.len() && winners[end].0 == winners[start].0 {
            end += 1;
        }
        let best = winners[start..end]
            .iter()
            .fold(None::<&(Coord, [f64; 3], usize)>, |acc, w| match acc {
                Some(b) if set.gaussians[b.2].opacity_logit >= set.gaussians[w.2].opacity_logit => Some(b),
                _ => Some(w),
            })
            .expect("non-empty group");
        let g = &set.gaussians[best.2];
        coords.push(best.0);
        let base = features.len();
        features.resize(base + channels, 0.0);
        let row = &mut features[base..];
        row[layout::OFFSET].copy_from_slice(&best.1);
        row[layout::COLOR].copy_from_slice(&g.color);
        row[layout::LOG_SCALE].copy_from_slice(&g.log_scale);
        row[layout::ROTATION].copy_from_slice(&g.rotation);
        row[layout::OPACITY] = g.opacity_logit;
        start = end;
    }
    Ok(SparseVoxelTensor::from_sorted(
        resolution, 1, channels, coords, features,
    ))
}

/// Decodes attribute features of one voxel into a Gaussian without activations.
pub fn attributes_from_row(row: &[f64], coord: &Coord, bounds: &Cube, grid: usize) -> GaussianAttributes {
    let edge = bounds.side() / grid as f64;
    let mut position = [0.0; 3];
    for a in 0..3 {
        position[a] = bounds.min + (coord[a] as f64 + row[layout::OFFSET][a]) * edge;
    }
    let mut g = GaussianAttributes {
        position,
        ..Default::default()
    };
    g.color.copy_from_slice(&row[layout::COLOR]);
    g.log_scale.copy_from_slice(&row[layout::LOG_SCALE]);
    g.rotation.copy_from_slice(&row[layout::ROTATION]);
    g.opacity_logit = row[layout::OPACITY];
    g
}

/// One Gaussian per active voxel: offsets clamped into the voxel, colors
/// clamped to `[0, 1]`, quaternions normalized.
pub fn devoxelize(tensor: &SparseVoxelTensor, bounds: Cube) -> Result<GaussianSet, CoreError> {
    if tensor.channels() < layout::BASE_CHANNELS {
        return Err(CoreError::Layout {
            expected: layout::BASE_CHANNELS,
            got: tensor.channels(),
        });
    }
    let grid = tensor.grid_size();
    let mut gaussians = Vec::with_capacity(tensor.len());
    let mut row = vec![0.0; tensor.channels()];
    for (i, c) in tensor.coords().iter().enumerate() {
        row.copy_from_slice(tensor.row(i));
        for v in &mut row[layout::OFFSET] {
            *v = v.clamp(0.0, MAX_OFFSET);
        }
        for v in &mut row[layout::COLOR] {
            *v = v.clamp(0.0, 1.0);
        }
        let mut g = attributes_from_row(&row, c, &bounds, grid);
        g.rotation = g.unit_rotation();
        if !g.is_finite() {
            return Err(CoreError::NonFinite("decoded gaussian"));
        }
        gaussians.push(g);
    }
    Ok(GaussianSet { gaussians, bounds })
}

/// Dense grid from a sparse tensor: active cells copy features and get
/// occupancy 1, inactive cells are zero.
pub fn densify(tensor: &SparseVoxelTensor, channels: usize) -> Result<LatentGrid, CoreError> {
    if tensor.channels() != channels {
        return Err(CoreError::Shape(format!(
            "tensor has {} channels, latent expects {channels}",
            tensor.channels()
        )));
    }
    let mut grid = LatentGrid::zeros(tensor.grid_size(), channels);
    for (i, c) in tensor.coords().iter().enumerate() {
        let cell = grid.cell_index(*c);
        grid.features[cell * channels..(cell + 1) * channels].copy_from_slice(tensor.row(i));
        grid.occupancy[cell] = 1.0;
    }
    Ok(grid)
}

/// Keeps cells with occupancy strictly above `threshold`.
pub fn sparsify(grid: &LatentGrid, threshold: f64) -> Flagged<SparseVoxelTensor> {
    let f = grid.channels;
    let mut coords = Vec::new();
    let mut features = Vec::new();
    // cell order with k fastest is already lexicographic
    for cell in 0..grid.cells() {
        if grid.occupancy[cell] > threshold {
            coords.push(grid.coord_of(cell));
            features.extend_from_slice(grid.cell_features(cell));
        }
    }
    let empty = coords.is_empty();
    let tensor = SparseVoxelTensor::from_sorted(grid.resolution, 1, f, coords, features);
    if empty {
        Flagged::warn(tensor, Warning::EmptySelection)
    } else {
        Flagged::ok(tensor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(n: usize, seed: u64) -> GaussianSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gaussians = (0..n)
            .map(|_| GaussianAttributes {
                position: [0; 3].map(|_| rng.gen_range(-1.0..1.0)),
                color: [0; 3].map(|_| rng.gen_range(0.0..1.0)),
                log_scale: [0; 3].map(|_| rng.gen_range(-5.0..-2.0)),
                rotation: [1.0, 0.1, -0.2, 0.05],
                opacity_logit: rng.gen_range(-3.0..3.0),
            })
            .collect();
        GaussianSet::new(gaussians, Cube::default()).unwrap()
    }

    #[test]
    fn center_gaussian_maps_to_center_voxel() {
        let set = GaussianSet::new(vec![GaussianAttributes::default()], Cube::default()).unwrap();
        let t = voxelize(&set, 4).unwrap();
        assert_eq!(t.coords(), &[[2, 2, 2]]);
        assert_eq!(&t.row(0)[layout::OFFSET], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn active_set_matches_floor_oracle() {
        let set = random_set(100, 7);
        let t = voxelize(&set, 16).unwrap();
        let mut oracle: Vec<Coord> = set
            .gaussians
            .iter()
            .map(|g| g.position.map(|x| ((x + 1.0) / 2.0 * 16.0).floor() as i32))
            .collect();
        oracle.sort();
        oracle.dedup();
        assert_eq!(t.coords(), oracle.as_slice());
    }

    #[test]
    fn upper_bound_clamps_into_last_voxel() {
        let g = GaussianAttributes {
            position: [1.0, 1.0, -1.0],
            ..Default::default()
        };
        let set = GaussianSet::new(vec![g], Cube::default()).unwrap();
        let t = voxelize(&set, 8).unwrap();
        assert_eq!(t.coords(), &[[7, 7, 0]]);
        assert!(t.row(0)[0] < 1.0);
    }

    #[test]
    fn collision_keeps_most_opaque() {
        let a = GaussianAttributes {
            position: [0.01, 0.01, 0.01],
            opacity_logit: -1.0,
            color: [1.0, 0.0, 0.0],
            ..Default::default()
        };
        let b = GaussianAttributes {
            position: [0.02, 0.02, 0.02],
            opacity_logit: 2.0,
            color: [0.0, 1.0, 0.0],
            ..Default::default()
        };
        let set = GaussianSet::new(vec![a, b], Cube::default()).unwrap();
        let t = voxelize(&set, 4).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(&t.row(0)[layout::COLOR], &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn empty_set_gives_empty_tensor() {
        let t = voxelize(&GaussianSet::empty(Cube::default()), 8).unwrap();
        assert!(t.is_empty());
        let back = devoxelize(&t, Cube::default()).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn round_trip_within_quantization_bound() {
        let set = random_set(1000, 11);
        let r = 64;
        let back = devoxelize(&voxelize(&set, r).unwrap(), Cube::default()).unwrap();
        // every input lies in the voxel of some decoded Gaussian
        for h in &set.gaussians {
            let best = back
                .gaussians
                .iter()
                .map(|g| {
                    (0..3)
                        .map(|a| (g.position[a] - h.position[a]).abs())
                        .fold(0.0, f64::max)
                })
                .fold(f64::INFINITY, f64::min);
            assert!(best <= 2.0 / r as f64, "error {best}");
        }
    }

    #[test]
    fn single_gaussian_round_trip_within_half_voxel() {
        let g = GaussianAttributes {
            position: [0.123, -0.456, 0.789],
            ..Default::default()
        };
        let set = GaussianSet::new(vec![g], Cube::default()).unwrap();
        let back = devoxelize(&voxelize(&set, 32).unwrap(), Cube::default()).unwrap();
        for a in 0..3 {
            assert!((back.gaussians[0].position[a] - g.position[a]).abs() <= 0.5 * 2.0 / 32.0);
        }
    }

    #[test]
    fn devoxelize_rejects_short_layout() {
        let t = SparseVoxelTensor::new(4, 1, 3, vec![[0, 0, 0]], vec![0.0; 3]).unwrap();
        assert!(matches!(devoxelize(&t, Cube::default()), Err(CoreError::Layout { .. })));
    }

    #[test]
    fn densify_examples() {
        let t = SparseVoxelTensor::new(2, 1, 1, vec![[0, 0, 0]], vec![3.0]).unwrap();
        let g = densify(&t, 1).unwrap();
        assert_eq!(g.occupancy.iter().sum::<f64>(), 1.0);

        let coords: Vec<Coord> = (0..8).map(|i| [i / 4, (i / 2) % 2, i % 2]).collect();
        let t = SparseVoxelTensor::new(2, 1, 1, coords, vec![1.0; 8]).unwrap();
        let g = densify(&t, 1).unwrap();
        assert!(g.occupancy.iter().all(|o| *o == 1.0));
        assert!(densify(&t, 2).is_err());
    }

    #[test]
    fn sparsify_examples() {
        let mut g = LatentGrid::zeros(4, 2);
        g.occupancy.iter_mut().for_each(|o| *o = 0.4);
        let s = sparsify(&g, 0.5);
        assert!(s.value.is_empty());
        assert_eq!(s.warning, Some(Warning::EmptySelection));

        for cell in [1, 17, 40] {
            g.occupancy[cell] = 0.6;
        }
        let s = sparsify(&g, 0.5);
        assert_eq!(s.value.len(), 3);
        assert!(!s.is_flagged());
    }

    #[test]
    fn sparsify_matches_scan_and_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = LatentGrid::zeros(6, 3);
        g.features.iter_mut().for_each(|v| *v = rng.gen_range(-2.0..2.0));
        g.occupancy.iter_mut().for_each(|o| *o = rng.gen_range(0.0..1.0));
        let s = sparsify(&g, 0.5).value;
        let mut scan = Vec::new();
        for i in 0..6 {
            for j in 0..6 {
                for k in 0..6 {
                    let cell = (i * 6 + j) * 6 + k;
                    if g.occupancy[cell] > 0.5 {
                        scan.push(([i as i32, j as i32, k as i32], cell));
                    }
                }
            }
        }
        assert_eq!(s.len(), scan.len());
        for (n, (c, cell)) in scan.iter().enumerate() {
            assert_eq!(&s.coords()[n], c);
            assert_eq!(s.row(n), &g.features[cell * 3..cell * 3 + 3]);
        }
        // sparsify ∘ densify is the identity on sparse tensors
        let again = sparsify(&densify(&s, 3).unwrap(), 0.5).value;
        assert_eq!(again, s);
    }

    #[test]
    fn tensor_rejects_bad_input() {
        assert!(SparseVoxelTensor::new(6, 1, 1, vec![], vec![]).is_err());
        assert!(SparseVoxelTensor::new(4, 1, 1, vec![[4, 0, 0]], vec![0.0]).is_err());
        assert!(SparseVoxelTensor::new(4, 2, 1, vec![[2, 0, 0]], vec![0.0]).is_err());
        assert!(matches!(
            SparseVoxelTensor::new(4, 1, 1, vec![[1, 0, 0], [0, 0, 0], [1, 0, 0]], vec![0.0; 3]),
            Err(CoreError::DuplicateCoordinate(_))
        ));
        let t = SparseVoxelTensor::new(4, 1, 1, vec![[1, 0, 0], [0, 0, 0]], vec![1.0, 2.0]).unwrap();
        assert_eq!(t.coords(), &[[0, 0, 0], [1, 0, 0]]);
        assert_eq!(t.features(), &[2.0, 1.0]);
    }
}
