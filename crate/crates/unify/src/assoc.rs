use jga_core::voxel::layout;
use jga_core::{Cube, GaussianAttributes, GaussianSet, KdTree, SparseVoxelTensor};

use crate::UnifyError;

/// Index of the nearest ground-truth centre for each point; ties go to the
/// lowest index.
pub fn associate_indices(points: &[[f64; 3]], gt: &GaussianSet) -> Result<Vec<usize>, UnifyError> {
    if gt.is_empty() {
        return Err(UnifyError::EmptyGroundTruth);
    }
    let tree = KdTree::new(&gt.positions());
    Ok(points
        .iter()
        .map(|p| tree.nearest(p).expect("tree is non-empty").0)
        .collect())
}

pub fn associate_nn(points: &[[f64; 3]], gt: &GaussianSet) -> Result<Vec<GaussianAttributes>, UnifyError> {
    Ok(associate_indices(points, gt)?
        .into_iter()
        .map(|i| gt.gaussians[i])
        .collect())
}

/// Position of each voxel's point, read from its offset channels.
pub(crate) fn voxel_points(t: &SparseVoxelTensor, bounds: &Cube) -> Vec<[f64; 3]> {
    let edge = bounds.side() / t.grid_size() as f64;
    t.coords()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let o = &t.row(i)[layout::OFFSET];
            [0, 1, 2].map(|a| bounds.min + (c[a] as f64 + o[a]) * edge)
        })
        .collect()
}

/// Attribute rows for the voxels of `input`: each voxel takes the attributes
/// of the ground-truth Gaussian nearest its point, with the offset expressed
/// relative to that voxel (possibly outside `[0, 1)`).
pub fn targets_for(
    input: &SparseVoxelTensor,
    gt: &GaussianSet,
    bounds: &Cube,
) -> Result<SparseVoxelTensor, UnifyError> {
    let points = voxel_points(input, bounds);
    let nearest = associate_nn(&points, gt)?;
    let edge = bounds.side() / input.grid_size() as f64;
    let mut feats = Vec::with_capacity(input.len() * layout::BASE_CHANNELS);
    for (c, g) in input.coords().iter().zip(&nearest) {
        for a in 0..3 {
            feats.push((g.position[a] - bounds.min) / edge - c[a] as f64);
        }
        feats.extend_from_slice(&g.color);
        feats.extend_from_slice(&g.log_scale);
        feats.extend_from_slice(&g.rotation);
        feats.push(g.opacity_logit);
    }
    Ok(input.with_features(layout::BASE_CHANNELS, feats)?)
}
