//! Layers with explicit forward/backward passes.
//!
//! Each layer stores only parameter handles; values live in a
//! [`ParameterStore`]. Backward passes accumulate into the store's gradient
//! buffers and return the gradient with respect to the layer input.

use rand::Rng;

use crate::gemm::gemm;
use crate::sparse::KernelMap;
use crate::store::{ParamId, ParameterStore};
use crate::NnError;

pub fn silu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v * jga_core::sigmoid(v)).collect()
}

pub fn silu_backward(x: &[f64], gy: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(gy)
        .map(|(&v, &g)| {
            let s = jga_core::sigmoid(v);
            g * s * (1.0 + v * (1.0 - s))
        })
        .collect()
}

/// Sinusoidal embedding of a scalar time `t ∈ [0, 1]`: `dim / 2` sines
/// followed by `dim / 2` cosines at geometrically spaced frequencies.
pub fn time_embedding(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let a = 1000.0 * t * freq;
        out[i] = a.sin();
        out[half + i] = a.cos();
    }
    out
}

fn add_rows(dst: &mut [f64], row: &[f64]) {
    for chunk in dst.chunks_exact_mut(row.len()) {
        for (d, v) in chunk.iter_mut().zip(row) {
            *d += v;
        }
    }
}

fn sum_rows(src: &[f64], width: usize, acc: &mut [f64]) {
    for chunk in src.chunks_exact(width) {
        for (a, v) in acc.iter_mut().zip(chunk) {
            *a += v;
        }
    }
}

/// Row-wise affine map `y = x W + b` with `W: [C_in, C_out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub cin: usize,
    pub cout: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        cin: usize,
        cout: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        let w = store.add_kaiming(&format!("{name}.w"), vec![cin, cout], cin, rng)?;
        let b = store.add_const(&format!("{name}.b"), vec![cout], 0.0)?;
        Ok(Self { w, b, cin, cout })
    }

    /// A linear layer whose weights and bias start at zero.
    pub fn zeroed(store: &mut ParameterStore, name: &str, cin: usize, cout: usize) -> Result<Self, NnError> {
        let w = store.add_const(&format!("{name}.w"), vec![cin, cout], 0.0)?;
        let b = store.add_const(&format!("{name}.b"), vec![cout], 0.0)?;
        Ok(Self { w, b, cin, cout })
    }

    pub fn forward(&self, store: &ParameterStore, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len() % self.cin, 0, "linear input width");
        let n = x.len() / self.cin;
        let mut y = vec![0.0; n * self.cout];
        add_rows(&mut y, store.value(self.b));
        gemm(
            n,
            self.cin,
            self.cout,
            x,
            false,
            store.value(self.w),
            false,
            &mut y,
            1.0,
        );
        y
    }

    pub fn backward(&self, store: &mut ParameterStore, x: &[f64], gy: &[f64]) -> Vec<f64> {
        let n = x.len() / self.cin;
        sum_rows(gy, self.cout, store.grad_mut(self.b));
        gemm(self.cin, n, self.cout, x, true, gy, false, store.grad_mut(self.w), 1.0);
        let mut gx = vec![0.0; n * self.cin];
        gemm(
            n,
            self.cout,
            self.cin,
            gy,
            false,
            store.value(self.w),
            true,
            &mut gx,
            0.0,
        );
        gx
    }
}

/// Sparse convolution weights `[k³, C_in, C_out]` plus bias; geometry comes
/// from the [`KernelMap`] passed at call time.
#[derive(Debug, Clone)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub k: usize,
    pub cin: usize,
    pub cout: usize,
}

impl Conv {
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        k: usize,
        cin: usize,
        cout: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        let taps = k * k * k;
        let w = store.add_kaiming(&format!("{name}.w"), vec![taps, cin, cout], taps * cin, rng)?;
        let b = store.add_const(&format!("{name}.b"), vec![cout], 0.0)?;
        Ok(Self { w, b, k, cin, cout })
    }

    pub fn zeroed(store: &mut ParameterStore, name: &str, k: usize, cin: usize, cout: usize) -> Result<Self, NnError> {
        let w = store.add_const(&format!("{name}.w"), vec![k * k * k, cin, cout], 0.0)?;
        let b = store.add_const(&format!("{name}.b"), vec![cout], 0.0)?;
        Ok(Self { w, b, k, cin, cout })
    }

    pub fn forward(&self, store: &ParameterStore, map: &KernelMap, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(map.k, self.k);
        map.forward(x, self.cin, store.value(self.w), self.cout, Some(store.value(self.b)))
    }

    pub fn backward(&self, store: &mut ParameterStore, map: &KernelMap, x: &[f64], gy: &[f64]) -> Vec<f64> {
        let w = store.value(self.w).to_vec();
        let mut gw = vec![0.0; w.len()];
        let mut gb = vec![0.0; self.cout];
        let gx = map.backward(x, self.cin, &w, self.cout, gy, &mut gw, Some(&mut gb));
        for (g, v) in store.grad_mut(self.w).iter_mut().zip(&gw) {
            *g += v;
        }
        for (g, v) in store.grad_mut(self.b).iter_mut().zip(&gb) {
            *g += v;
        }
        gx
    }
}

/// Group normalization over all rows of one sample, with per-channel affine.
#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub channels: usize,
    pub groups: usize,
    pub eps: f64,
}

#[derive(Debug, Clone, Default)]
pub struct NormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl GroupNorm {
    /// Uses the largest group count not above 8 that divides `channels`.
    pub fn new(store: &mut ParameterStore, name: &str, channels: usize) -> Result<Self, NnError> {
        let groups = (1..=channels.min(8)).rev().find(|g| channels % g == 0).unwrap_or(1);
        let gamma = store.add_const(&format!("{name}.gamma"), vec![channels], 1.0)?;
        let beta = store.add_const(&format!("{name}.beta"), vec![channels], 0.0)?;
        Ok(Self {
            gamma,
            beta,
            channels,
            groups,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, store: &ParameterStore, x: &[f64]) -> (Vec<f64>, NormCache) {
        let c = self.channels;
        let gs = c / self.groups;
        let rows = x.len() / c;
        let count = (rows * gs) as f64;
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; self.groups];
        for g in 0..self.groups {
            let cols = g * gs..(g + 1) * gs;
            if rows == 0 {
                continue;
            }
            let mut mean = 0.0;
            for r in 0..rows {
                mean += x[r * c + cols.start..r * c + cols.end].iter().sum::<f64>();
            }
            mean /= count;
            let mut var = 0.0;
            for r in 0..rows {
                var += x[r * c + cols.start..r * c + cols.end]
                    .iter()
                    .map(|v| (v - mean).powi(2))
                    .sum::<f64>();
            }
            var /= count;
            let is = 1.0 / (var + self.eps).sqrt();
            inv_std[g] = is;
            for r in 0..rows {
                for j in cols.clone() {
                    xhat[r * c + j] = (x[r * c + j] - mean) * is;
                }
            }
        }
        let (gamma, beta) = (store.value(self.gamma), store.value(self.beta));
        let y = xhat
            .iter()
            .enumerate()
            .map(|(i, v)| v * gamma[i % c] + beta[i % c])
            .collect();
        (y, NormCache { xhat, inv_std })
    }

    pub fn backward(&self, store: &mut ParameterStore, cache: &NormCache, gy: &[f64]) -> Vec<f64> {
        let c = self.channels;
        let gs = c / self.groups;
        let rows = gy.len() / c;
        {
            let gg = store.grad_mut(self.gamma);
            for (i, g) in gy.iter().enumerate() {
                gg[i % c] += g * cache.xhat[i];
            }
        }
        sum_rows(gy, c, store.grad_mut(self.beta));
        let gamma = store.value(self.gamma);
        let mut gx = vec![0.0; gy.len()];
        let count = (rows * gs) as f64;
        for g in 0..self.groups {
            let cols = g * gs..(g + 1) * gs;
            let (mut s1, mut s2) = (0.0, 0.0);
            for r in 0..rows {
                for j in cols.clone() {
                    let d = gy[r * c + j] * gamma[j];
                    s1 += d;
                    s2 += d * cache.xhat[r * c + j];
                }
            }
            let is = cache.inv_std[g];
            for r in 0..rows {
                for j in cols.clone() {
                    let i = r * c + j;
                    let d = gy[i] * gamma[j];
                    gx[i] = is * (d - s1 / count - cache.xhat[i] * s2 / count);
                }
            }
        }
        gx
    }
}

/// `GN → SiLU → conv → (+ emb) → GN → SiLU → conv`, plus a residual path
/// (a linear projection when the channel count changes).
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub norm1: GroupNorm,
    pub conv1: Conv,
    pub emb: Option<Linear>,
    pub norm2: GroupNorm,
    pub conv2: Conv,
    pub skip: Option<Linear>,
}

#[derive(Debug, Clone, Default)]
pub struct ResCache {
    x: Vec<f64>,
    n1: NormCache,
    a1: Vec<f64>,
    s1: Vec<f64>,
    emb_in: Vec<f64>,
    n2: NormCache,
    a2: Vec<f64>,
    s2: Vec<f64>,
}

impl ResBlock {
    /// `emb_dim > 0` adds a projection of a per-sample embedding after the
    /// first convolution.
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        cin: usize,
        cout: usize,
        emb_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        Ok(Self {
            norm1: GroupNorm::new(store, &format!("{name}.norm1"), cin)?,
            conv1: Conv::new(store, &format!("{name}.conv1"), 3, cin, cout, rng)?,
            emb: if emb_dim > 0 {
                Some(Linear::new(store, &format!("{name}.emb"), emb_dim, cout, rng)?)
            } else {
                None
            },
            norm2: GroupNorm::new(store, &format!("{name}.norm2"), cout)?,
            conv2: Conv::new(store, &format!("{name}.conv2"), 3, cout, cout, rng)?,
            skip: if cin != cout {
                Some(Linear::new(store, &format!("{name}.skip"), cin, cout, rng)?)
            } else {
                None
            },
        })
    }

    pub fn cin(&self) -> usize {
        self.conv1.cin
    }

    pub fn cout(&self) -> usize {
        self.conv2.cout
    }

    pub fn forward(
        &self,
        store: &ParameterStore,
        map: &KernelMap,
        x: &[f64],
        emb: Option<&[f64]>,
    ) -> (Vec<f64>, ResCache) {
        let (a1, n1) = self.norm1.forward(store, x);
        let s1 = silu(&a1);
        let mut h = self.conv1.forward(store, map, &s1);
        let emb_in = match (&self.emb, emb) {
            (Some(layer), Some(e)) => {
                add_rows(&mut h, &layer.forward(store, e));
                e.to_vec()
            }
            _ => Vec::new(),
        };
        let (a2, n2) = self.norm2.forward(store, &h);
        let s2 = silu(&a2);
        let mut y = self.conv2.forward(store, map, &s2);
        match &self.skip {
            Some(skip) => {
                for (d, v) in y.iter_mut().zip(skip.forward(store, x)) {
                    *d += v;
                }
            }
            None => {
                for (d, v) in y.iter_mut().zip(x) {
                    *d += v;
                }
            }
        }
        let cache = ResCache {
            x: x.to_vec(),
            n1,
            a1,
            s1,
            emb_in,
            n2,
            a2,
            s2,
        };
        (y, cache)
    }

    /// Returns the input gradient and, when an embedding was used, its
    /// gradient.
    pub fn backward(
        &self,
        store: &mut ParameterStore,
        map: &KernelMap,
        cache: &ResCache,
        gy: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let mut gx = match &self.skip {
            Some(skip) => skip.backward(store, &cache.x, gy),
            None => gy.to_vec(),
        };
        let gs2 = self.conv2.backward(store, map, &cache.s2, gy);
        let ga2 = silu_backward(&cache.a2, &gs2);
        let gh = self.norm2.backward(store, &cache.n2, &ga2);
        let mut gemb = Vec::new();
        if let (Some(layer), false) = (&self.emb, cache.emb_in.is_empty()) {
            let mut row = vec![0.0; layer.cout];
            sum_rows(&gh, layer.cout, &mut row);
            gemb = layer.backward(store, &cache.emb_in, &row);
        }
        let gs1 = self.conv1.backward(store, map, &cache.s1, &gh);
        let ga1 = silu_backward(&cache.a1, &gs1);
        for (d, v) in gx.iter_mut().zip(self.norm1.backward(store, &cache.n1, &ga1)) {
            *d += v;
        }
        (gx, gemb)
    }
}
