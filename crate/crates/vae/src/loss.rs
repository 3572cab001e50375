//! Training objective: KL, occupancy, attribute and render terms.

use std::collections::HashSet;

use jga_core::{
    voxel::{attributes_from_row, downsample_coords, layout},
    Camera, Coord, Cube, Flagged, GaussianSet, Image, LatentGrid, LossWeights, SparseVoxelTensor, Warning,
};
use jga_render::{l1, l1_grad, rasterize, rasterize_backward, ssim_with_grad, GaussianGrad, RenderConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::model::StageOutput;
use crate::VaeError;

/// Diagonal Gaussian over a dense latent grid; inactive cells are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDistribution {
    pub resolution: usize,
    pub channels: usize,
    pub mean: Vec<f64>,
    pub logvar: Vec<f64>,
    pub mask: Vec<bool>,
}

fn cell_of(r: usize, c: &Coord) -> usize {
    (c[0] as usize * r + c[1] as usize) * r + c[2] as usize
}

impl LatentDistribution {
    /// Scatters encoder rows `[mean | logvar]` into dense grids.
    pub fn from_rows(resolution: usize, channels: usize, coords: &[Coord], rows: &[f64]) -> Self {
        let cells = resolution.pow(3);
        let mut d = Self {
            resolution,
            channels,
            mean: vec![0.0; cells * channels],
            logvar: vec![0.0; cells * channels],
            mask: vec![false; cells],
        };
        for (i, c) in coords.iter().enumerate() {
            let cell = cell_of(resolution, c);
            let row = &rows[i * 2 * channels..(i + 1) * 2 * channels];
            d.mean[cell * channels..(cell + 1) * channels].copy_from_slice(&row[..channels]);
            d.logvar[cell * channels..(cell + 1) * channels].copy_from_slice(&row[channels..]);
            d.mask[cell] = true;
        }
        d
    }

    /// Gathers dense gradients back into encoder-row layout.
    pub fn rows_grad(&self, coords: &[Coord], gmean: &[f64], glogvar: &[f64]) -> Vec<f64> {
        let f = self.channels;
        let mut out = Vec::with_capacity(coords.len() * 2 * f);
        for c in coords {
            let cell = cell_of(self.resolution, c);
            out.extend_from_slice(&gmean[cell * f..(cell + 1) * f]);
            out.extend_from_slice(&glogvar[cell * f..(cell + 1) * f]);
        }
        out
    }

    pub fn active(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// The mean as a latent grid with the active mask as occupancy.
    pub fn mean_grid(&self) -> LatentGrid {
        LatentGrid {
            resolution: self.resolution,
            channels: self.channels,
            features: self.mean.clone(),
            occupancy: self.mask.iter().map(|m| if *m { 1.0 } else { 0.0 }).collect(),
        }
    }

    /// Standard-normal draws for the active entries, zero elsewhere.
    pub fn noise(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = self.channels;
        let mut eps = vec![0.0; self.mean.len()];
        for (cell, m) in self.mask.iter().enumerate() {
            if *m {
                for v in &mut eps[cell * f..(cell + 1) * f] {
                    *v = StandardNormal.sample(&mut rng);
                }
            }
        }
        eps
    }
}

/// `z = mean + exp(logvar / 2) * eps` on active cells; occupancy is the mask.
pub fn reparameterize(d: &LatentDistribution, seed: u64) -> LatentGrid {
    reparameterize_with(d, &d.noise(seed))
}

pub fn reparameterize_with(d: &LatentDistribution, eps: &[f64]) -> LatentGrid {
    let mut g = d.mean_grid();
    for (i, v) in g.features.iter_mut().enumerate() {
        *v += (0.5 * d.logvar[i]).exp() * eps[i];
    }
    g
}

/// Mean over active entries of `½(μ² + σ² − log σ² − 1)`, with gradients
/// with respect to mean and log-variance.
pub fn kl_loss(d: &LatentDistribution) -> (f64, Vec<f64>, Vec<f64>) {
    let f = d.channels;
    let n = (d.active() * f).max(1) as f64;
    let mut loss = 0.0;
    let mut gm = vec![0.0; d.mean.len()];
    let mut gl = vec![0.0; d.mean.len()];
    for (cell, m) in d.mask.iter().enumerate() {
        if !m {
            continue;
        }
        for i in cell * f..(cell + 1) * f {
            let (mu, lv) = (d.mean[i], d.logvar[i]);
            loss += 0.5 * (mu * mu + lv.exp() - lv - 1.0);
            gm[i] = mu / n;
            gl[i] = 0.5 * (lv.exp() - 1.0) / n;
        }
    }
    (loss / n, gm, gl)
}

fn bce_with_logits(logit: f64, target: f64) -> f64 {
    logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p()
}

/// Binary cross-entropy over each stage's candidates against the ground-truth
/// coordinates downsampled to that stage, summed over stages. Returns the
/// loss and per-stage logit gradients.
pub fn occupancy_loss(stages: &[StageOutput], gt: &SparseVoxelTensor) -> (f64, Vec<Vec<f64>>) {
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(stages.len());
    for st in stages {
        let truth: HashSet<Coord> = downsample_coords(gt.coords(), st.stride as i32).into_iter().collect();
        let n = st.logits.len().max(1) as f64;
        let mut g = vec![0.0; st.logits.len()];
        let mut loss = 0.0;
        for (i, c) in st.coords.iter().enumerate() {
            let y = if truth.contains(c) { 1.0 } else { 0.0 };
            loss += bce_with_logits(st.logits[i], y);
            g[i] = (jga_core::sigmoid(st.logits[i]) - y) / n;
        }
        total += loss / n;
        grads.push(g);
    }
    (total, grads)
}

/// Mean squared error over channels on the coordinates shared by `pred` and
/// `gt`, with the gradient with respect to `pred`'s features. An empty
/// intersection gives 0 with [`Warning::EmptyIntersection`].
pub fn attr_loss(pred: &SparseVoxelTensor, gt: &SparseVoxelTensor) -> Flagged<(f64, Vec<f64>)> {
    let c = pred.channels().min(gt.channels());
    let mut grad = vec![0.0; pred.features().len()];
    let mut pairs = Vec::new();
    // both coordinate lists are sorted: merge
    let (mut i, mut j) = (0, 0);
    while i < pred.len() && j < gt.len() {
        match pred.coords()[i].cmp(&gt.coords()[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                pairs.push((i, j));
                i += 1;
                j += 1;
            }
        }
    }
    if pairs.is_empty() {
        return Flagged::warn((0.0, grad), Warning::EmptyIntersection);
    }
    let n = (pairs.len() * c) as f64;
    let pc = pred.channels();
    let mut loss = 0.0;
    for (i, j) in pairs {
        let (p, g) = (pred.row(i), gt.row(j));
        for k in 0..c {
            let d = p[k] - g[k];
            loss += d * d;
            grad[i * pc + k] = 2.0 * d / n;
        }
    }
    Flagged::ok((loss / n, grad))
}

#[derive(Debug, Clone)]
pub struct RenderView {
    pub camera: Camera,
    pub image: Image,
}

/// Gaussians from attribute rows without clamping, so gradients reach every
/// channel.
pub fn gaussians_from_rows(t: &SparseVoxelTensor, bounds: Cube) -> GaussianSet {
    let grid = t.grid_size();
    let gaussians = t
        .coords()
        .iter()
        .enumerate()
        .map(|(i, c)| attributes_from_row(t.row(i), c, &bounds, grid))
        .collect();
    GaussianSet { gaussians, bounds }
}

/// Row gradients from per-Gaussian render gradients.
pub fn rows_from_gaussian_grads(t: &SparseVoxelTensor, bounds: &Cube, grads: &[GaussianGrad]) -> Vec<f64> {
    let c = t.channels();
    let edge = bounds.side() / t.grid_size() as f64;
    let mut out = vec![0.0; t.features().len()];
    for (i, g) in grads.iter().enumerate() {
        let row = &mut out[i * c..(i + 1) * c];
        for a in 0..3 {
            row[layout::OFFSET.start + a] = g.position[a] * edge;
        }
        row[layout::COLOR].copy_from_slice(&g.color);
        row[layout::LOG_SCALE].copy_from_slice(&g.log_scale);
        row[layout::ROTATION].copy_from_slice(&g.rotation);
        row[layout::OPACITY] = g.opacity_logit;
    }
    out
}

/// `Σ_views λ1·L1 + λ2·(1 − SSIM)` and the per-Gaussian gradients. The
/// perceptual term has no network here and contributes nothing.
pub fn render_loss(
    set: &GaussianSet,
    views: &[RenderView],
    weights: &LossWeights,
    config: &RenderConfig,
) -> Result<(f64, Vec<GaussianGrad>), VaeError> {
    if views.is_empty() {
        return Err(VaeError::NoViews);
    }
    let mut total = 0.0;
    let mut grads = vec![GaussianGrad::default(); set.len()];
    for v in views {
        let img = rasterize(set, &v.camera, config)?.into_inner().image;
        let a = l1(&img, &v.image)?;
        let (s, gs) = ssim_with_grad(&img, &v.image)?;
        total += weights.render_l1 * a + weights.render_ssim * (1.0 - s);
        if set.is_empty() {
            continue;
        }
        let mut g = l1_grad(&img, &v.image)?;
        for (x, y) in g.data.iter_mut().zip(&gs.data) {
            *x = weights.render_l1 * *x - weights.render_ssim * y;
        }
        for (acc, d) in grads.iter_mut().zip(rasterize_backward(set, &v.camera, config, &g)?) {
            acc.add_assign(&d);
        }
    }
    Ok((total, grads))
}

/// Component values of the VAE objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize)]
pub struct LossTerms {
    pub kl: f64,
    pub occupancy: f64,
    pub attr: f64,
    pub render: f64,
}

/// `λ4·KL + λ5·Occ + λ6·Attr + λ7·Render`; the last two are dropped while
/// `warm` is true.
pub fn total_loss(terms: &LossTerms, w: &LossWeights, warm: bool) -> f64 {
    let base = w.kl * terms.kl + w.occupancy * terms.occupancy;
    if warm {
        base
    } else {
        base + w.attr * terms.attr + w.render * terms.render
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(mean: f64, logvar: f64) -> LatentDistribution {
        LatentDistribution {
            resolution: 2,
            channels: 2,
            mean: vec![mean; 16],
            logvar: vec![logvar; 16],
            mask: vec![true; 8],
        }
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(kl_loss(&dist(0.0, 0.0)).0, 0.0);
        assert!((kl_loss(&dist(1.0, 0.0)).0 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn half_probability_gives_ln2() {
        let gt = SparseVoxelTensor::new(8, 1, 1, vec![[0, 0, 0]], vec![0.0]).unwrap();
        let st = StageOutput {
            coords: vec![[0, 0, 0], [0, 0, 1]],
            stride: 1,
            logits: vec![0.0, 0.0],
            kept: vec![],
        };
        let (l, _) = occupancy_loss(&[st], &gt);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn disjoint_attr_sets_are_flagged() {
        let a = SparseVoxelTensor::new(4, 1, 1, vec![[0, 0, 0]], vec![1.0]).unwrap();
        let b = SparseVoxelTensor::new(4, 1, 1, vec![[1, 0, 0]], vec![1.0]).unwrap();
        let r = attr_loss(&a, &b);
        assert_eq!(r.value.0, 0.0);
        assert_eq!(r.warning, Some(Warning::EmptyIntersection));
    }

    #[test]
    fn warmup_drops_late_terms() {
        let t = LossTerms {
            kl: 1.0,
            occupancy: 1.0,
            attr: 1.0,
            render: 1.0,
        };
        let w = LossWeights::published();
        assert_eq!(total_loss(&t, &w, true), w.kl + w.occupancy);
        assert_eq!(total_loss(&t, &w, false), w.kl + w.occupancy + w.attr + w.render);
    }
}
