//! Dense 3-d convolution on channels-last grids `[D, H, W, C]`.
//!
//! Weights are `[k, k, k, C_in, C_out]`. Odd kernels pad by `(k - 1) / 2`,
//! even kernels do not pad; output index `o` reads inputs
//! `stride * o + tap - pad`. Out-of-range inputs count as zero.

use crate::tensor::DenseTensor;
use crate::NnError;

struct Geometry {
    dims: [usize; 3],
    out: [usize; 3],
    k: usize,
    cin: usize,
    cout: usize,
    pad: isize,
    stride: usize,
}

pub(crate) fn padding(k: usize) -> isize {
    if k % 2 == 1 {
        ((k - 1) / 2) as isize
    } else {
        0
    }
}

fn geometry(input: &DenseTensor, weight: &DenseTensor, stride: usize) -> Result<Geometry, NnError> {
    let [d, h, w, cin] = input.dims[..] else {
        return Err(NnError::Shape(format!(
            "input must be [D, H, W, C], got {:?}",
            input.dims
        )));
    };
    let [k, k1, k2, wcin, cout] = weight.dims[..] else {
        return Err(NnError::Shape(format!(
            "weight must be [k, k, k, Cin, Cout], got {:?}",
            weight.dims
        )));
    };
    if k != k1 || k != k2 || k == 0 {
        return Err(NnError::Shape(format!(
            "kernel must be cubic, got {:?}",
            &weight.dims[..3]
        )));
    }
    if wcin != cin {
        return Err(NnError::Shape(format!(
            "input has {cin} channels, weight expects {wcin}"
        )));
    }
    if stride == 0 {
        return Err(NnError::Shape("stride must be positive".into()));
    }
    let pad = padding(k);
    let out_len = |n: usize| -> Result<usize, NnError> {
        let span = n as isize + 2 * pad - k as isize;
        if span < 0 {
            return Err(NnError::Shape(format!("extent {n} smaller than kernel {k}")));
        }
        Ok(span as usize / stride + 1)
    };
    Ok(Geometry {
        dims: [d, h, w],
        out: [out_len(d)?, out_len(h)?, out_len(w)?],
        k,
        cin,
        cout,
        pad,
        stride,
    })
}

impl Geometry {
    /// Calls `f(out_cell, tap, in_cell)` for every valid (output, tap) pair.
    fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [d, h, w] = self.dims.map(|v| v as isize);
        let [od, oh, ow] = self.out;
        let k = self.k;
        for x in 0..od {
            for y in 0..oh {
                for z in 0..ow {
                    let o = (x * oh + y) * ow + z;
                    for a in 0..k {
                        let ix = (self.stride * x + a) as isize - self.pad;
                        if ix < 0 || ix >= d {
                            continue;
                        }
                        for b in 0..k {
                            let iy = (self.stride * y + b) as isize - self.pad;
                            if iy < 0 || iy >= h {
                                continue;
                            }
                            for c in 0..k {
                                let iz = (self.stride * z + c) as isize - self.pad;
                                if iz < 0 || iz >= w {
                                    continue;
                                }
                                let i = ((ix * h + iy) * w + iz) as usize;
                                f(o, (a * k + b) * k + c, i);
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn dense_conv3d_fwd(
    input: &DenseTensor,
    weight: &DenseTensor,
    bias: Option<&[f64]>,
    stride: usize,
) -> Result<DenseTensor, NnError> {
    let g = geometry(input, weight, stride)?;
    let (cin, cout) = (g.cin, g.cout);
    let cells = g.out.iter().product::<usize>();
    let mut out = vec![0.0; cells * cout];
    if let Some(b) = bias {
        if b.len() != cout {
            return Err(NnError::Shape(format!(
                "bias has {} entries for {cout} channels",
                b.len()
            )));
        }
        for row in out.chunks_exact_mut(cout) {
            row.copy_from_slice(b);
        }
    }
    g.for_each(|o, tap, i| {
        let x = &input.data[i * cin..(i + 1) * cin];
        let wt = &weight.data[tap * cin * cout..(tap + 1) * cin * cout];
        let y = &mut out[o * cout..(o + 1) * cout];
        for (ci, xv) in x.iter().enumerate() {
            let wr = &wt[ci * cout..(ci + 1) * cout];
            for (yv, wv) in y.iter_mut().zip(wr) {
                *yv += xv * wv;
            }
        }
    });
    DenseTensor::new(vec![g.out[0], g.out[1], g.out[2], cout], out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseConvGrads {
    pub input: DenseTensor,
    pub weight: DenseTensor,
    pub bias: Vec<f64>,
}

pub fn dense_conv3d_bwd(
    input: &DenseTensor,
    weight: &DenseTensor,
    stride: usize,
    grad_out: &DenseTensor,
) -> Result<DenseConvGrads, NnError> {
    let g = geometry(input, weight, stride)?;
    let (cin, cout) = (g.cin, g.cout);
    let expect = vec![g.out[0], g.out[1], g.out[2], cout];
    if grad_out.dims != expect {
        return Err(NnError::Shape(format!(
            "grad_out {:?}, expected {expect:?}",
            grad_out.dims
        )));
    }
    let mut gin = vec![0.0; input.len()];
    let mut gw = vec![0.0; weight.len()];
    let mut gb = vec![0.0; cout];
    for row in grad_out.data.chunks_exact(cout) {
        for (b, v) in gb.iter_mut().zip(row) {
            *b += v;
        }
    }
    g.for_each(|o, tap, i| {
        let x = &input.data[i * cin..(i + 1) * cin];
        let gy = &grad_out.data[o * cout..(o + 1) * cout];
        let base = tap * cin * cout;
        for ci in 0..cin {
            let wr = &weight.data[base + ci * cout..base + (ci + 1) * cout];
            let gwr = &mut gw[base + ci * cout..base + (ci + 1) * cout];
            let mut acc = 0.0;
            for co in 0..cout {
                acc += gy[co] * wr[co];
                gwr[co] += gy[co] * x[ci];
            }
            gin[i * cin + ci] += acc;
        }
    });
    Ok(DenseConvGrads {
        input: DenseTensor::new(input.dims.clone(), gin)?,
        weight: DenseTensor::new(weight.dims.clone(), gw)?,
        bias: gb,
    })
}
