//! Sparse 3-d convolutions over sorted coordinate lists.
//!
//! A [`KernelMap`] lists, for every kernel tap, the (input row, output row)
//! pairs it connects. Forward and backward passes gather the input rows of a
//! tap, multiply by that tap's `[C_in, C_out]` weight slice and scatter-add
//! the result, so both directions share one map.
//!
//! Convolution: output `o` reads input `stride * o + tap - pad`.
//! Transposed convolution: input `i` writes output `stride * i + tap - pad`.
//! `pad` is `(k - 1) / 2` for odd `k` and 0 for even `k`.

use std::collections::{BTreeSet, HashMap};

use jga_core::{Coord, Flagged, SparseVoxelTensor, Warning};

use crate::dense::padding;
use crate::gemm::gemm;
use crate::NnError;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KernelMap {
    pub k: usize,
    pub n_in: usize,
    pub n_out: usize,
    pub pairs: Vec<Vec<(u32, u32)>>,
}

fn taps(k: usize) -> impl Iterator<Item = (usize, [i32; 3])> {
    (0..k * k * k).map(move |t| (t, [(t / (k * k)) as i32, ((t / k) % k) as i32, (t % k) as i32]))
}

fn lookup(coords: &[Coord]) -> HashMap<Coord, u32> {
    coords.iter().enumerate().map(|(i, c)| (*c, i as u32)).collect()
}

impl KernelMap {
    /// Map for a convolution from `input` onto the given `output` coordinates.
    pub fn conv_to(input: &[Coord], output: &[Coord], k: usize, stride: usize) -> Self {
        let index = lookup(input);
        let pad = padding(k) as i32;
        let s = stride as i32;
        let mut pairs = vec![Vec::new(); k * k * k];
        for (o_row, o) in output.iter().enumerate() {
            for (t, d) in taps(k) {
                let c = [s * o[0] + d[0] - pad, s * o[1] + d[1] - pad, s * o[2] + d[2] - pad];
                if let Some(&i_row) = index.get(&c) {
                    pairs[t].push((i_row, o_row as u32));
                }
            }
        }
        Self {
            k,
            n_in: input.len(),
            n_out: output.len(),
            pairs,
        }
    }

    /// Strided convolution map; output coordinates are the distinct
    /// floor-divided input coordinates.
    pub fn conv(input: &[Coord], k: usize, stride: usize) -> (Vec<Coord>, Self) {
        let output = if stride == 1 {
            input.to_vec()
        } else {
            let s = stride as i32;
            let set: BTreeSet<Coord> = input.iter().map(|c| c.map(|v| v.div_euclid(s))).collect();
            set.into_iter().collect()
        };
        let map = Self::conv_to(input, &output, k, stride);
        (output, map)
    }

    /// Generative transposed-convolution map. Without `target`, outputs are
    /// every in-grid coordinate covered by some input's kernel footprint;
    /// with `target`, outputs are exactly the target coordinates.
    pub fn transpose(
        input: &[Coord],
        k: usize,
        stride: usize,
        out_grid: usize,
        target: Option<&[Coord]>,
    ) -> (Vec<Coord>, Self) {
        let pad = padding(k) as i32;
        let s = stride as i32;
        let g = out_grid as i32;
        let gen = |i: &Coord, d: [i32; 3]| [s * i[0] + d[0] - pad, s * i[1] + d[1] - pad, s * i[2] + d[2] - pad];
        let inside = |c: &Coord| c.iter().all(|v| (0..g).contains(v));
        let output: Vec<Coord> = match target {
            Some(t) => t.to_vec(),
            None => {
                let mut set = BTreeSet::new();
                for i in input {
                    for (_, d) in taps(k) {
                        let c = gen(i, d);
                        if inside(&c) {
                            set.insert(c);
                        }
                    }
                }
                set.into_iter().collect()
            }
        };
        let index = lookup(&output);
        let mut pairs = vec![Vec::new(); k * k * k];
        for (i_row, i) in input.iter().enumerate() {
            for (t, d) in taps(k) {
                if let Some(&o_row) = index.get(&gen(i, d)) {
                    pairs[t].push((i_row as u32, o_row));
                }
            }
        }
        let n_out = output.len();
        (
            output,
            Self {
                k,
                n_in: input.len(),
                n_out,
                pairs,
            },
        )
    }

    pub fn taps(&self) -> usize {
        self.pairs.len()
    }

    /// `y[o] = bias + Σ_tap W_tapᵀ x[i]` over the map's pairs.
    pub fn forward(&self, x: &[f64], cin: usize, w: &[f64], cout: usize, bias: Option<&[f64]>) -> Vec<f64> {
        assert_eq!(x.len(), self.n_in * cin, "input rows");
        assert_eq!(w.len(), self.taps() * cin * cout, "weights");
        let mut y = vec![0.0; self.n_out * cout];
        if let Some(b) = bias {
            for row in y.chunks_exact_mut(cout) {
                row.copy_from_slice(b);
            }
        }
        let mut gathered = Vec::new();
        let mut prod = Vec::new();
        for (t, pairs) in self.pairs.iter().enumerate() {
            if pairs.is_empty() {
                continue;
            }
            let n = pairs.len();
            gathered.clear();
            for &(i, _) in pairs {
                gathered.extend_from_slice(&x[i as usize * cin..(i as usize + 1) * cin]);
            }
            prod.clear();
            prod.resize(n * cout, 0.0);
            let wt = &w[t * cin * cout..(t + 1) * cin * cout];
            gemm(n, cin, cout, &gathered, false, wt, false, &mut prod, 0.0);
            for (p, &(_, o)) in pairs.iter().enumerate() {
                let dst = &mut y[o as usize * cout..(o as usize + 1) * cout];
                for (d, v) in dst.iter_mut().zip(&prod[p * cout..(p + 1) * cout]) {
                    *d += v;
                }
            }
        }
        y
    }

    /// Accumulates weight and bias gradients and returns the input gradient.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        x: &[f64],
        cin: usize,
        w: &[f64],
        cout: usize,
        gy: &[f64],
        gw: &mut [f64],
        gb: Option<&mut [f64]>,
    ) -> Vec<f64> {
        assert_eq!(gy.len(), self.n_out * cout, "output gradient rows");
        if let Some(gb) = gb {
            for row in gy.chunks_exact(cout) {
                for (b, v) in gb.iter_mut().zip(row) {
                    *b += v;
                }
            }
        }
        let mut gx = vec![0.0; self.n_in * cin];
        let mut xs = Vec::new();
        let mut gs = Vec::new();
        let mut gxs = Vec::new();
        for (t, pairs) in self.pairs.iter().enumerate() {
            if pairs.is_empty() {
                continue;
            }
            let n = pairs.len();
            xs.clear();
            gs.clear();
            for &(i, o) in pairs {
                xs.extend_from_slice(&x[i as usize * cin..(i as usize + 1) * cin]);
                gs.extend_from_slice(&gy[o as usize * cout..(o as usize + 1) * cout]);
            }
            let range = t * cin * cout..(t + 1) * cin * cout;
            gemm(cin, n, cout, &xs, true, &gs, false, &mut gw[range.clone()], 1.0);
            gxs.clear();
            gxs.resize(n * cin, 0.0);
            gemm(n, cout, cin, &gs, false, &w[range], true, &mut gxs, 0.0);
            for (p, &(i, _)) in pairs.iter().enumerate() {
                let dst = &mut gx[i as usize * cin..(i as usize + 1) * cin];
                for (d, v) in dst.iter_mut().zip(&gxs[p * cin..(p + 1) * cin]) {
                    *d += v;
                }
            }
        }
        gx
    }
}

/// Strided sparse convolution. Returns the output tensor and the map needed
/// for the backward pass.
pub fn sparse_conv3d_fwd(
    input: &SparseVoxelTensor,
    w: &[f64],
    bias: Option<&[f64]>,
    k: usize,
    cout: usize,
    stride: usize,
) -> Result<(SparseVoxelTensor, KernelMap), NnError> {
    let out_stride = input.stride() * stride;
    if out_stride > input.resolution() {
        return Err(NnError::Capacity(format!(
            "stride {out_stride} exceeds resolution {}",
            input.resolution()
        )));
    }
    let (coords, map) = KernelMap::conv(input.coords(), k, stride);
    let y = map.forward(input.features(), input.channels(), w, cout, bias);
    let out = SparseVoxelTensor::from_sorted(input.resolution(), out_stride, cout, coords, y);
    Ok((out, map))
}

/// Generative transposed convolution that creates output coordinates from
/// kernel footprints (or writes onto `target` when given).
#[allow(clippy::too_many_arguments)]
pub fn gen_sparse_transpose_conv3d_fwd(
    input: &SparseVoxelTensor,
    w: &[f64],
    bias: Option<&[f64]>,
    k: usize,
    cout: usize,
    stride: usize,
    target: Option<&[Coord]>,
    max_voxels: Option<usize>,
) -> Result<(SparseVoxelTensor, KernelMap), NnError> {
    if stride == 0 || input.stride() % stride != 0 {
        return Err(NnError::Capacity(format!(
            "cannot upsample a stride-{} tensor by {stride}",
            input.stride()
        )));
    }
    let out_stride = input.stride() / stride;
    let grid = input.resolution() / out_stride;
    let (coords, map) = KernelMap::transpose(input.coords(), k, stride, grid, target);
    if let Some(max) = max_voxels {
        if coords.len() > max {
            return Err(NnError::Capacity(format!(
                "{} output voxels exceed the limit of {max}",
                coords.len()
            )));
        }
    }
    let y = map.forward(input.features(), input.channels(), w, cout, bias);
    let out = match target {
        Some(_) => SparseVoxelTensor::new(input.resolution(), out_stride, cout, coords, y)?,
        None => SparseVoxelTensor::from_sorted(input.resolution(), out_stride, cout, coords, y),
    };
    Ok((out, map))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pruned {
    pub tensor: SparseVoxelTensor,
    /// Input rows that survived, in output order.
    pub kept: Vec<usize>,
}

/// Keeps the rows whose mask entry is set.
pub fn select_rows(input: &SparseVoxelTensor, keep: &[bool]) -> Result<Pruned, NnError> {
    if keep.len() != input.len() {
        return Err(NnError::Shape(format!(
            "{} mask entries for {} voxels",
            keep.len(),
            input.len()
        )));
    }
    let c = input.channels();
    let kept: Vec<usize> = (0..input.len()).filter(|&i| keep[i]).collect();
    let coords = kept.iter().map(|&i| input.coords()[i]).collect();
    let mut features = Vec::with_capacity(kept.len() * c);
    for &i in &kept {
        features.extend_from_slice(input.row(i));
    }
    let tensor = SparseVoxelTensor::from_sorted(input.resolution(), input.stride(), c, coords, features);
    Ok(Pruned { tensor, kept })
}

/// Keeps voxels whose occupancy probability `sigmoid(logit)` exceeds 0.5.
/// Flags [`Warning::AllPruned`] when nothing survives.
pub fn prune(input: &SparseVoxelTensor, logits: &[f64]) -> Result<Flagged<Pruned>, NnError> {
    if logits.len() != input.len() {
        return Err(NnError::Shape(format!(
            "{} logits for {} voxels",
            logits.len(),
            input.len()
        )));
    }
    let keep: Vec<bool> = logits.iter().map(|l| jga_core::sigmoid(*l) > 0.5).collect();
    let pruned = select_rows(input, &keep)?;
    Ok(if pruned.kept.is_empty() && !input.is_empty() {
        Flagged::warn(pruned, Warning::AllPruned)
    } else {
        Flagged::ok(pruned)
    })
}

/// Straight-through gradient: kept rows receive their output gradient,
/// dropped rows receive zero.
pub fn prune_backward(kept: &[usize], n_in: usize, channels: usize, grad_out: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; n_in * channels];
    for (o, &i) in kept.iter().enumerate() {
        g[i * channels..(i + 1) * channels].copy_from_slice(&grad_out[o * channels..(o + 1) * channels]);
    }
    g
}
