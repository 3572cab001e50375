//! Structural similarity with an 11×11 Gaussian window (σ = 1.5).
//!
//! The window is truncated at image borders and renormalized, so the map has
//! the same size as the input. Channels are scored independently and the
//! result is the mean over all pixels and channels.

use jga_core::Image;

use crate::loss::check_shapes;
use crate::RenderError;

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn kernel() -> [f64; WINDOW] {
    let half = (WINDOW / 2) as f64;
    let mut k = [0.0; WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    k
}

/// Unnormalized separable blur of one plane, truncated at the borders.
fn blur(plane: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let half = (WINDOW / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = x as isize + i as isize - half;
                if xx >= 0 && (xx as usize) < w {
                    acc += kv * plane[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let yy = y as isize + i as isize - half;
                if yy >= 0 && (yy as usize) < h {
                    acc += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

struct Plane {
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    s_aa: Vec<f64>,
    s_bb: Vec<f64>,
    s_ab: Vec<f64>,
}

fn channel(img: &Image, c: usize) -> Vec<f64> {
    img.data.iter().skip(c).step_by(img.channels).copied().collect()
}

fn moments(a: &[f64], b: &[f64], w: usize, h: usize, k: &[f64; WINDOW], norm: &[f64]) -> Plane {
    let f = |v: Vec<f64>| -> Vec<f64> { blur(&v, w, h, k).iter().zip(norm).map(|(x, z)| x / z).collect() };
    Plane {
        mu_a: f(a.to_vec()),
        mu_b: f(b.to_vec()),
        s_aa: f(a.iter().map(|x| x * x).collect()),
        s_bb: f(b.iter().map(|x| x * x).collect()),
        s_ab: f(a.iter().zip(b).map(|(x, y)| x * y).collect()),
    }
}

pub fn ssim(a: &Image, b: &Image) -> Result<f64, RenderError> {
    Ok(evaluate(a, b, false)?.0)
}

/// SSIM and its gradient with respect to `a`.
pub fn ssim_with_grad(a: &Image, b: &Image) -> Result<(f64, Image), RenderError> {
    let (v, g) = evaluate(a, b, true)?;
    Ok((v, g.expect("gradient requested")))
}

fn evaluate(a: &Image, b: &Image, want_grad: bool) -> Result<(f64, Option<Image>), RenderError> {
    check_shapes(a, b)?;
    let (w, h, nc) = (a.width, a.height, a.channels);
    let k = kernel();
    let norm = blur(&vec![1.0; w * h], w, h, &k);
    let count = (w * h * nc).max(1) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Image {
        data: vec![0.0; a.data.len()],
        ..a.clone()
    });
    for c in 0..nc {
        let pa = channel(a, c);
        let pb = channel(b, c);
        let m = moments(&pa, &pb, w, h, &k, &norm);
        let n = w * h;
        let mut d_mu = vec![0.0; n];
        let mut d_saa = vec![0.0; n];
        let mut d_sab = vec![0.0; n];
        for p in 0..n {
            let (ma, mb) = (m.mu_a[p], m.mu_b[p]);
            let va = m.s_aa[p] - ma * ma;
            let vb = m.s_bb[p] - mb * mb;
            let cov = m.s_ab[p] - ma * mb;
            let n1 = 2.0 * ma * mb + C1;
            let n2 = 2.0 * cov + C2;
            let d1 = ma * ma + mb * mb + C1;
            let d2 = va + vb + C2;
            let s = n1 * n2 / (d1 * d2);
            total += s;
            if want_grad {
                // divide by the window normalization here so the transpose
                // pass below is a plain blur
                let up = 1.0 / count / norm[p];
                d_mu[p] = up * ((2.0 * mb * n2 - 2.0 * mb * n1) / (d1 * d2) - s * 2.0 * ma * (1.0 / d1 - 1.0 / d2));
                d_saa[p] = up * (-s / d2);
                d_sab[p] = up * (2.0 * n1 / (d1 * d2));
            }
        }
        if let Some(g) = grad.as_mut() {
            let t_mu = blur(&d_mu, w, h, &k);
            let t_saa = blur(&d_saa, w, h, &k);
            let t_sab = blur(&d_sab, w, h, &k);
            for p in 0..n {
                g.data[p * nc + c] = t_mu[p] + 2.0 * pa[p] * t_saa[p] + pb[p] * t_sab[p];
            }
        }
    }
    Ok((total / count, grad))
}
