use std::collections::BTreeMap;

use jga_core::voxel::{layout, locate};
use jga_core::{devoxelize, Coord, Cube, GaussianSet, SmplMesh, SparseVoxelTensor};
use jga_nn::{AdamConfig, ParamId, ParameterStore, SparseUNet, UNetCache, UNetGeometry, UNetSpec};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::project::ColoredCloud;
use crate::UnifyError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnifyKind {
    /// Input channels: offset, rgb.
    Depth,
    /// Input channels: offset, rgb of visible vertices, visible fraction.
    Smpl,
}

impl UnifyKind {
    pub fn channels(self) -> usize {
        match self {
            Self::Depth => 6,
            Self::Smpl => 7,
        }
    }

    /// Input channels copied onto the same output channels.
    fn skip(self) -> std::ops::Range<usize> {
        match self {
            Self::Depth => 0..6,
            Self::Smpl => 0..3,
        }
    }
}

struct Accum {
    pos: [f64; 3],
    rgb: [f64; 3],
    n: usize,
    seen: usize,
}

fn voxel_rows(
    points: impl Iterator<Item = ([f64; 3], Option<[f64; 3]>)>,
    bounds: &Cube,
    resolution: usize,
    flag: bool,
) -> Result<SparseVoxelTensor, UnifyError> {
    let mut cells: BTreeMap<Coord, Accum> = BTreeMap::new();
    for (p, color) in points {
        if !bounds.contains(&p) {
            continue;
        }
        let (c, off) = locate(&p, bounds, resolution);
        let a = cells.entry(c).or_insert(Accum {
            pos: [0.0; 3],
            rgb: [0.0; 3],
            n: 0,
            seen: 0,
        });
        for k in 0..3 {
            a.pos[k] += off[k];
        }
        if let Some(rgb) = color {
            for k in 0..3 {
                a.rgb[k] += rgb[k];
            }
            a.seen += 1;
        }
        a.n += 1;
    }
    if cells.is_empty() {
        return Err(UnifyError::EmptyInput);
    }
    let channels = if flag { 7 } else { 6 };
    let mut coords = Vec::with_capacity(cells.len());
    let mut feats = Vec::with_capacity(cells.len() * channels);
    for (c, a) in cells {
        coords.push(c);
        feats.extend(a.pos.map(|v| v / a.n as f64));
        feats.extend(a.rgb.map(|v| if a.seen > 0 { v / a.seen as f64 } else { 0.0 }));
        if flag {
            feats.push(a.seen as f64 / a.n as f64);
        }
    }
    Ok(SparseVoxelTensor::new(resolution, 1, channels, coords, feats)?)
}

/// Voxelizes a colored cloud: per voxel the mean offset and mean color of
/// its points. Points outside `bounds` are dropped.
pub fn depth_input(cloud: &ColoredCloud, bounds: &Cube, resolution: usize) -> Result<SparseVoxelTensor, UnifyError> {
    voxel_rows(
        cloud.points.iter().zip(&cloud.colors).map(|(p, c)| (*p, Some(*c))),
        bounds,
        resolution,
        false,
    )
}

/// Voxelizes mesh vertices: mean offset, mean color over visible vertices
/// (zero when none) and the visible fraction.
pub fn smpl_input(mesh: &SmplMesh, bounds: &Cube, resolution: usize) -> Result<SparseVoxelTensor, UnifyError> {
    let n = mesh.vertices.len();
    let visible = mesh.visible.clone().unwrap_or_else(|| vec![false; n]);
    let colors = mesh.vertex_colors.clone().unwrap_or_else(|| vec![[0.0; 3]; n]);
    voxel_rows(
        mesh.vertices
            .iter()
            .enumerate()
            .map(|(i, p)| (*p, visible[i].then_some(colors[i]))),
        bounds,
        resolution,
        true,
    )
}

/// Coordinate-preserving sparse U-Net from modality features to the 14
/// attribute channels: `out = U(x) + skip(x) + prior`, where `skip` copies
/// offsets (and colors for depth) and `prior` is a learned row.
#[derive(Debug, Clone)]
pub struct UnifyNet {
    pub kind: UnifyKind,
    net: SparseUNet,
    prior: ParamId,
}

impl UnifyNet {
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        kind: UnifyKind,
        width: usize,
        levels: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, UnifyError> {
        let spec = UNetSpec {
            cin: kind.channels(),
            cout: layout::BASE_CHANNELS,
            width,
            levels,
            emb_dim: 0,
            zero_head: true,
        };
        let net = SparseUNet::new(store, name, spec, rng)?;
        let prior = store.add_const(&format!("{name}.prior"), vec![layout::BASE_CHANNELS], 0.0)?;
        Ok(Self { kind, net, prior })
    }

    /// Sets the prior row to the mean of `targets` minus what the skip path
    /// contributes on average.
    pub fn init_prior(&self, store: &mut ParameterStore, pairs: &[(SparseVoxelTensor, SparseVoxelTensor)]) {
        let mut mean = [0.0; layout::BASE_CHANNELS];
        let mut n = 0usize;
        for (input, target) in pairs {
            for i in 0..target.len() {
                for (m, v) in mean.iter_mut().zip(target.row(i)) {
                    *m += v;
                }
                for c in self.kind.skip() {
                    mean[c] -= input.row(i)[c];
                }
            }
            n += target.len();
        }
        if n > 0 {
            for (dst, m) in store.value_mut(self.prior).iter_mut().zip(mean) {
                *dst = m / n as f64;
            }
        }
    }

    pub fn geometry(&self, input: &SparseVoxelTensor) -> UNetGeometry {
        UNetGeometry::new(input.coords(), input.grid_size(), self.net.spec.levels)
    }

    fn check(&self, input: &SparseVoxelTensor) -> Result<(), UnifyError> {
        if input.channels() != self.kind.channels() {
            return Err(UnifyError::Shape(format!(
                "{:?} network expects {} input channels, got {}",
                self.kind,
                self.kind.channels(),
                input.channels()
            )));
        }
        if input.is_empty() {
            return Err(UnifyError::EmptyInput);
        }
        Ok(())
    }

    fn forward(
        &self,
        store: &ParameterStore,
        geo: &UNetGeometry,
        input: &SparseVoxelTensor,
    ) -> Result<(SparseVoxelTensor, UNetCache), UnifyError> {
        self.check(input)?;
        let (mut y, cache) = self.net.forward(store, geo, input.features(), None);
        let cin = self.kind.channels();
        let prior = store.value(self.prior);
        for (i, row) in y.chunks_exact_mut(layout::BASE_CHANNELS).enumerate() {
            for (r, p) in row.iter_mut().zip(prior) {
                *r += p;
            }
            for c in self.kind.skip() {
                row[c] += input.features()[i * cin + c];
            }
        }
        Ok((input.with_features(layout::BASE_CHANNELS, y)?, cache))
    }

    pub fn predict(&self, store: &ParameterStore, input: &SparseVoxelTensor) -> Result<SparseVoxelTensor, UnifyError> {
        Ok(self.forward(store, &self.geometry(input), input)?.0)
    }

    /// Devoxelized prediction.
    pub fn to_gaussians(
        &self,
        store: &ParameterStore,
        input: &SparseVoxelTensor,
        bounds: Cube,
    ) -> Result<GaussianSet, UnifyError> {
        Ok(devoxelize(&self.predict(store, input)?, bounds)?)
    }

    /// Mean squared error against `target` (same coordinates); accumulates
    /// gradients.
    pub fn loss_and_grad(
        &self,
        store: &mut ParameterStore,
        geo: &UNetGeometry,
        input: &SparseVoxelTensor,
        target: &SparseVoxelTensor,
    ) -> Result<f64, UnifyError> {
        if target.coords() != input.coords() || target.channels() != layout::BASE_CHANNELS {
            return Err(UnifyError::Shape(
                "target must share the input coordinates and have 14 channels".into(),
            ));
        }
        let (y, cache) = self.forward(store, geo, input)?;
        let n = y.features().len() as f64;
        let mut loss = 0.0;
        let g: Vec<f64> = y
            .features()
            .iter()
            .zip(target.features())
            .map(|(a, b)| {
                loss += (a - b) * (a - b);
                2.0 * (a - b) / n
            })
            .collect();
        for (dst, row) in store.grad_mut(self.prior).iter_mut().zip(transpose_sum(&g)) {
            *dst += row;
        }
        self.net.backward(store, geo, &cache, &g);
        Ok(loss / n)
    }

    /// Adam on `pairs`, one pair per step in order, with a gradient-norm clip
    /// of 1. Returns the per-step losses.
    pub fn train(
        &self,
        store: &mut ParameterStore,
        pairs: &[(SparseVoxelTensor, SparseVoxelTensor)],
        steps: usize,
        adam: &AdamConfig,
    ) -> Result<Vec<f64>, UnifyError> {
        if pairs.is_empty() {
            return Err(UnifyError::EmptyInput);
        }
        let geos: Vec<UNetGeometry> = pairs.iter().map(|(x, _)| self.geometry(x)).collect();
        let mut losses = Vec::with_capacity(steps);
        for s in 0..steps {
            let k = s % pairs.len();
            store.zero_grad();
            losses.push(self.loss_and_grad(store, &geos[k], &pairs[k].0, &pairs[k].1)?);
            let norm = store.grad_norm();
            if norm > 1.0 {
                store.scale_grads(1.0 / norm);
            }
            let lr = adam.lr * 0.5 * (1.0 + (std::f64::consts::PI * s as f64 / steps as f64).cos());
            store.adam_step(&AdamConfig { lr, ..*adam })?;
        }
        Ok(losses)
    }
}

fn transpose_sum(g: &[f64]) -> [f64; layout::BASE_CHANNELS] {
    let mut out = [0.0; layout::BASE_CHANNELS];
    for row in g.chunks_exact(layout::BASE_CHANNELS) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}
