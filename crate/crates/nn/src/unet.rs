//! Coordinate-preserving sparse U-Net.
//!
//! Level `l` runs at stride `2^l` relative to the input with width
//! `width * 2^l`. Downsampling uses k2/s2 convolutions; upsampling uses k2/s2
//! transposed convolutions restricted to the finer level's coordinates, so
//! the output has exactly the input's coordinate set.

use rand::Rng;
use serde::{Deserialize, Serialize};

use jga_core::Coord;

use crate::layers::{silu, silu_backward, time_embedding, Conv, GroupNorm, Linear, NormCache, ResBlock, ResCache};
use crate::sparse::KernelMap;
use crate::store::ParameterStore;
use crate::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UNetSpec {
    pub cin: usize,
    pub cout: usize,
    pub width: usize,
    pub levels: usize,
    /// Time-embedding size; 0 disables the time input.
    pub emb_dim: usize,
    /// Start the output layer at zero so the untrained net outputs zeros.
    pub zero_head: bool,
}

/// Kernel maps for one coordinate set, reusable across forward passes.
#[derive(Debug, Clone)]
pub struct UNetGeometry {
    pub coords: Vec<Vec<Coord>>,
    same: Vec<KernelMap>,
    down: Vec<KernelMap>,
    up: Vec<KernelMap>,
}

impl UNetGeometry {
    /// `grid` is the side of the grid the input coordinates live in.
    pub fn new(coords: &[Coord], grid: usize, levels: usize) -> Self {
        let mut levels_coords = vec![coords.to_vec()];
        let mut same = Vec::new();
        let mut down = Vec::new();
        let mut up = Vec::new();
        let mut g = grid;
        for l in 0..levels {
            let c = &levels_coords[l];
            same.push(KernelMap::conv(c, 3, 1).1);
            if l + 1 < levels {
                let (coarse, map) = KernelMap::conv(c, 2, 2);
                down.push(map);
                up.push(KernelMap::transpose(&coarse, 2, 2, g, Some(c)).1);
                levels_coords.push(coarse);
                g = (g / 2).max(1);
            }
        }
        Self {
            coords: levels_coords,
            same,
            down,
            up,
        }
    }

    pub fn rows(&self) -> usize {
        self.coords[0].len()
    }
}

#[derive(Debug, Clone)]
pub struct SparseUNet {
    pub spec: UNetSpec,
    time: Option<(Linear, Linear)>,
    stem: Linear,
    enc: Vec<ResBlock>,
    down: Vec<Conv>,
    mid: ResBlock,
    up: Vec<Conv>,
    dec: Vec<ResBlock>,
    head_norm: GroupNorm,
    head: Linear,
}

#[derive(Debug, Clone, Default)]
pub struct UNetCache {
    x: Vec<f64>,
    emb0: Vec<f64>,
    emb1: Vec<f64>,
    emb: Vec<f64>,
    enc: Vec<ResCache>,
    down_in: Vec<Vec<f64>>,
    mid: ResCache,
    up_in: Vec<Vec<f64>>,
    dec: Vec<ResCache>,
    head_pre: Vec<f64>,
    head_norm: NormCache,
    head_in: Vec<f64>,
}

impl SparseUNet {
    pub fn new(store: &mut ParameterStore, name: &str, spec: UNetSpec, rng: &mut impl Rng) -> Result<Self, NnError> {
        if spec.levels == 0 || spec.width == 0 {
            return Err(NnError::Shape(
                "U-Net needs at least one level and positive width".into(),
            ));
        }
        let w = |l: usize| spec.width << l;
        let e = spec.emb_dim;
        let time = if e > 0 {
            Some((
                Linear::new(store, &format!("{name}.time1"), e, e, rng)?,
                Linear::new(store, &format!("{name}.time2"), e, e, rng)?,
            ))
        } else {
            None
        };
        let stem = Linear::new(store, &format!("{name}.stem"), spec.cin, w(0), rng)?;
        let mut enc = Vec::new();
        let mut down = Vec::new();
        for l in 0..spec.levels - 1 {
            enc.push(ResBlock::new(store, &format!("{name}.enc{l}"), w(l), w(l), e, rng)?);
            down.push(Conv::new(store, &format!("{name}.down{l}"), 2, w(l), w(l + 1), rng)?);
        }
        let top = spec.levels - 1;
        let mid = ResBlock::new(store, &format!("{name}.mid"), w(top), w(top), e, rng)?;
        let mut up = Vec::new();
        let mut dec = Vec::new();
        for l in 0..spec.levels - 1 {
            up.push(Conv::new(store, &format!("{name}.up{l}"), 2, w(l + 1), w(l), rng)?);
            dec.push(ResBlock::new(store, &format!("{name}.dec{l}"), w(l), w(l), e, rng)?);
        }
        let head_norm = GroupNorm::new(store, &format!("{name}.head_norm"), w(0))?;
        let head = if spec.zero_head {
            Linear::zeroed(store, &format!("{name}.head"), w(0), spec.cout)?
        } else {
            Linear::new(store, &format!("{name}.head"), w(0), spec.cout, rng)?
        };
        Ok(Self {
            spec,
            time,
            stem,
            enc,
            down,
            mid,
            up,
            dec,
            head_norm,
            head,
        })
    }

    pub fn forward(
        &self,
        store: &ParameterStore,
        geo: &UNetGeometry,
        x: &[f64],
        t: Option<f64>,
    ) -> (Vec<f64>, UNetCache) {
        assert_eq!(geo.same.len(), self.spec.levels, "geometry built for a different depth");
        let mut cache = UNetCache {
            x: x.to_vec(),
            ..Default::default()
        };
        if let (Some((l1, l2)), Some(t)) = (&self.time, t) {
            cache.emb0 = time_embedding(t, self.spec.emb_dim);
            cache.emb1 = l1.forward(store, &cache.emb0);
            cache.emb = l2.forward(store, &silu(&cache.emb1));
        }
        let emb = (!cache.emb.is_empty()).then_some(&cache.emb[..]);
        let mut skips = Vec::new();
        let mut h = self.stem.forward(store, x);
        for l in 0..self.enc.len() {
            let (out, c) = self.enc[l].forward(store, &geo.same[l], &h, emb);
            cache.enc.push(c);
            h = self.down[l].forward(store, &geo.down[l], &out);
            cache.down_in.push(out.clone());
            skips.push(out);
        }
        let top = self.spec.levels - 1;
        let (out, c) = self.mid.forward(store, &geo.same[top], &h, emb);
        cache.mid = c;
        h = out;
        cache.up_in = vec![Vec::new(); self.up.len()];
        let mut dec_caches = vec![ResCache::default(); self.dec.len()];
        for l in (0..self.up.len()).rev() {
            let mut u = self.up[l].forward(store, &geo.up[l], &h);
            cache.up_in[l] = std::mem::take(&mut h);
            for (a, b) in u.iter_mut().zip(&skips[l]) {
                *a += b;
            }
            let (out, c) = self.dec[l].forward(store, &geo.same[l], &u, emb);
            dec_caches[l] = c;
            h = out;
        }
        cache.dec = dec_caches;
        let (a, nc) = self.head_norm.forward(store, &h);
        let s = silu(&a);
        let y = self.head.forward(store, &s);
        cache.head_pre = a;
        cache.head_norm = nc;
        cache.head_in = s;
        (y, cache)
    }

    /// Accumulates parameter gradients; returns the input gradient.
    pub fn backward(&self, store: &mut ParameterStore, geo: &UNetGeometry, cache: &UNetCache, gy: &[f64]) -> Vec<f64> {
        let gs = self.head.backward(store, &cache.head_in, gy);
        let ga = silu_backward(&cache.head_pre, &gs);
        let mut gh = self.head_norm.backward(store, &cache.head_norm, &ga);
        let mut gemb = vec![0.0; cache.emb.len()];
        let mut add_emb = |g: Vec<f64>| {
            for (a, b) in gemb.iter_mut().zip(g) {
                *a += b;
            }
        };
        let mut gskips = vec![Vec::new(); self.up.len()];
        for l in 0..self.up.len() {
            let (g, ge) = self.dec[l].backward(store, &geo.same[l], &cache.dec[l], &gh);
            add_emb(ge);
            gskips[l] = g.clone();
            gh = self.up[l].backward(store, &geo.up[l], &cache.up_in[l], &g);
        }
        let top = self.spec.levels - 1;
        let (g, ge) = self.mid.backward(store, &geo.same[top], &cache.mid, &gh);
        add_emb(ge);
        gh = g;
        for l in (0..self.enc.len()).rev() {
            let mut g = self.down[l].backward(store, &geo.down[l], &cache.down_in[l], &gh);
            for (a, b) in g.iter_mut().zip(&gskips[l]) {
                *a += b;
            }
            let (g, ge) = self.enc[l].backward(store, &geo.same[l], &cache.enc[l], &g);
            add_emb(ge);
            gh = g;
        }
        let gx = self.stem.backward(store, &cache.x, &gh);
        if let Some((l1, l2)) = &self.time {
            if !cache.emb.is_empty() {
                let g1 = l2.backward(store, &silu(&cache.emb1), &gemb);
                let g1 = silu_backward(&cache.emb1, &g1);
                l1.backward(store, &cache.emb0, &g1);
            }
        }
        gx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_head_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParameterStore::new();
        let spec = UNetSpec {
            cin: 3,
            cout: 2,
            width: 4,
            levels: 2,
            emb_dim: 0,
            zero_head: true,
        };
        let net = SparseUNet::new(&mut store, "u", spec, &mut rng).unwrap();
        let coords: Vec<Coord> = vec![[0, 0, 0], [0, 1, 0], [3, 3, 2]];
        let geo = UNetGeometry::new(&coords, 4, 2);
        let (y, _) = net.forward(&store, &geo, &[0.5; 9], None);
        assert_eq!(y, vec![0.0; 6]);
    }
}
