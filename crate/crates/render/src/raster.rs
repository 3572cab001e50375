use jga_core::{Camera, DepthMap, Flagged, GaussianAttributes, GaussianSet, Image, Warning};
use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::RenderError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub background: [f64; 3],
    /// Splat footprint radius in screen-space standard deviations.
    pub cutoff_sigma: f64,
    /// Added to the diagonal of every screen-space covariance (pixels²).
    pub cov_regularizer: f64,
    /// Compositing stops once transmittance falls below this value.
    pub min_transmittance: f64,
    /// Gaussians closer than this camera depth are culled.
    pub near: f64,
    /// Pixels whose accumulated alpha is below this report no depth.
    pub depth_alpha_threshold: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            background: [1.0; 3],
            cutoff_sigma: 4.0,
            cov_regularizer: 0.3,
            min_transmittance: 1e-4,
            near: 0.01,
            depth_alpha_threshold: 0.5,
        }
    }
}

impl RenderConfig {
    /// Configuration without footprint culling, so the image is a smooth
    /// function of every attribute.
    pub fn exact() -> Self {
        Self {
            cutoff_sigma: f64::INFINITY,
            ..Self::default()
        }
    }
}

/// A Gaussian projected to the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplatFragment {
    pub mean: [f64; 2],
    /// Regularized screen-space covariance.
    pub cov: [[f64; 2]; 2],
    pub depth: f64,
    pub color: [f64; 3],
    pub opacity: f64,
}

#[derive(Debug, Clone)]
struct Splat {
    source: usize,
    frag: SplatFragment,
    // inverse covariance (a, b, c) of [[a, b], [b, c]]
    conic: [f64; 3],
    bbox: [usize; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub image: Image,
    pub depth: DepthMap,
    /// Accumulated alpha per pixel.
    pub alpha: Vec<f64>,
}

/// Projected, depth-sorted splats plus the per-pixel lists that reference them.
#[derive(Debug, Clone)]
pub struct Projection {
    splats: Vec<Splat>,
    pixels: Vec<Vec<u32>>,
    width: usize,
    height: usize,
    config: RenderConfig,
}

impl Projection {
    pub fn fragments(&self) -> impl Iterator<Item = (usize, &SplatFragment)> {
        self.splats.iter().map(|s| (s.source, &s.frag))
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }
}

/// Gradient of a scalar loss with respect to one Gaussian's stored attributes.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GaussianGrad {
    pub position: [f64; 3],
    pub color: [f64; 3],
    pub log_scale: [f64; 3],
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
}

impl GaussianGrad {
    pub fn add_assign(&mut self, o: &GaussianGrad) {
        for i in 0..3 {
            self.position[i] += o.position[i];
            self.color[i] += o.color[i];
            self.log_scale[i] += o.log_scale[i];
        }
        for i in 0..4 {
            self.rotation[i] += o.rotation[i];
        }
        self.opacity_logit += o.opacity_logit;
    }
}

pub(crate) fn quat_to_matrix(q: &[f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = *q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

fn unit_quat(raw: &[f64; 4]) -> ([f64; 4], f64) {
    let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n < 1e-12 {
        ([1.0, 0.0, 0.0, 0.0], 0.0)
    } else {
        (raw.map(|v| v / n), n)
    }
}

struct Geometry {
    cam_point: Vector3<f64>,
    jac: Matrix2x3<f64>,
    world_rot: Matrix3<f64>,
    gauss_rot: Matrix3<f64>,
    scale: Vector3<f64>,
    cov_cam: Matrix3<f64>,
    cov2d: Matrix2<f64>,
    mean: Vector2<f64>,
}

fn geometry(g: &GaussianAttributes, cam: &Camera, w: &Matrix3<f64>, reg: f64) -> Geometry {
    let p = Vector3::from(g.position);
    let t = w * p + Vector3::from(cam.translation);
    let (q, _) = unit_quat(&g.rotation);
    let rot = quat_to_matrix(&q);
    let scale = Vector3::from(g.log_scale.map(f64::exp));
    let l = rot * Matrix3::from_diagonal(&scale);
    let cov3 = l * l.transpose();
    let cov_cam = w * cov3 * w.transpose();
    let (tx, ty, tz) = (t.x, t.y, t.z);
    let jac = Matrix2x3::new(
        cam.fx / tz,
        0.0,
        -cam.fx * tx / (tz * tz),
        0.0,
        cam.fy / tz,
        -cam.fy * ty / (tz * tz),
    );
    let cov2d = jac * cov_cam * jac.transpose() + Matrix2::identity() * reg;
    let mean = Vector2::new(cam.fx * tx / tz + cam.cx, cam.fy * ty / tz + cam.cy);
    Geometry {
        cam_point: t,
        jac,
        world_rot: *w,
        gauss_rot: rot,
        scale,
        cov_cam,
        cov2d,
        mean,
    }
}

fn depth_key(a: &Splat, b: &Splat, set: &[GaussianAttributes]) -> std::cmp::Ordering {
    let ga = &set[a.source];
    let gb = &set[b.source];
    let fields = |g: &GaussianAttributes| {
        let mut v = Vec::with_capacity(14);
        v.extend_from_slice(&g.position);
        v.extend_from_slice(&g.color);
        v.extend_from_slice(&g.log_scale);
        v.extend_from_slice(&g.rotation);
        v.push(g.opacity_logit);
        v
    };
    a.frag.depth.total_cmp(&b.frag.depth).then_with(|| {
        fields(ga)
            .iter()
            .zip(fields(gb).iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    })
}

/// Projects and depth-sorts a Gaussian set for one camera.
pub fn project(set: &GaussianSet, cam: &Camera, config: &RenderConfig) -> Result<Projection, RenderError> {
    cam.validate()?;
    let w = cam.rotation_matrix();
    let (width, height) = (cam.width, cam.height);
    let mut splats = Vec::new();
    for (i, g) in set.gaussians.iter().enumerate() {
        let geo = geometry(g, cam, &w, config.cov_regularizer);
        if geo.cam_point.z <= config.near {
            continue;
        }
        let c = geo.cov2d;
        let det = c[(0, 0)] * c[(1, 1)] - c[(0, 1)] * c[(1, 0)];
        if !(det > 0.0) || !det.is_finite() {
            continue;
        }
        let conic = [c[(1, 1)] / det, -c[(0, 1)] / det, c[(0, 0)] / det];
        let bbox = if config.cutoff_sigma.is_finite() {
            let mid = 0.5 * (c[(0, 0)] + c[(1, 1)]);
            let lambda = mid + (mid * mid - det).max(0.0).sqrt();
            let r = config.cutoff_sigma * lambda.sqrt();
            let x0 = (geo.mean.x - r).ceil().max(0.0);
            let x1 = (geo.mean.x + r).floor().min(width as f64 - 1.0);
            let y0 = (geo.mean.y - r).ceil().max(0.0);
            let y1 = (geo.mean.y + r).floor().min(height as f64 - 1.0);
            if x1 < x0 || y1 < y0 {
                continue;
            }
            [x0 as usize, x1 as usize, y0 as usize, y1 as usize]
        } else {
            [0, width - 1, 0, height - 1]
        };
        splats.push(Splat {
            source: i,
            frag: SplatFragment {
                mean: [geo.mean.x, geo.mean.y],
                cov: [[c[(0, 0)], c[(0, 1)]], [c[(1, 0)], c[(1, 1)]]],
                depth: geo.cam_point.z,
                color: g.color,
                opacity: g.opacity(),
            },
            conic,
            bbox,
        });
    }
    splats.sort_by(|a, b| depth_key(a, b, &set.gaussians));
    let mut pixels = vec![Vec::new(); width * height];
    for (si, s) in splats.iter().enumerate() {
        let [x0, x1, y0, y1] = s.bbox;
        for y in y0..=y1 {
            for x in x0..=x1 {
                pixels[y * width + x].push(si as u32);
            }
        }
    }
    Ok(Projection {
        splats,
        pixels,
        width,
        height,
        config: *config,
    })
}

#[inline]
fn splat_alpha(s: &Splat, x: f64, y: f64) -> (f64, f64, f64, f64) {
    let dx = x - s.frag.mean[0];
    let dy = y - s.frag.mean[1];
    let [a, b, c] = s.conic;
    let power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy);
    let gval = power.exp();
    (s.frag.opacity * gval, gval, dx, dy)
}

impl Projection {
    fn composite_pixel(&self, idx: usize) -> ([f64; 3], f64, f64) {
        let x = (idx % self.width) as f64;
        let y = (idx / self.width) as f64;
        let mut color = [0.0; 3];
        let mut t = 1.0;
        let mut depth = 0.0;
        for &si in &self.pixels[idx] {
            let s = &self.splats[si as usize];
            let (alpha, _, _, _) = splat_alpha(s, x, y);
            let w = alpha * t;
            for ch in 0..3 {
                color[ch] += s.frag.color[ch] * w;
            }
            depth += s.frag.depth * w;
            t *= 1.0 - alpha;
            if t < self.config.min_transmittance {
                break;
            }
        }
        for ch in 0..3 {
            color[ch] += t * self.config.background[ch];
        }
        (color, depth, 1.0 - t)
    }

    pub fn render(&self) -> Rendered {
        let n = self.width * self.height;
        let results: Vec<([f64; 3], f64, f64)> = (0..n).into_par_iter().map(|i| self.composite_pixel(i)).collect();
        let mut data = Vec::with_capacity(n * 3);
        let mut depth = Vec::with_capacity(n);
        let mut alpha = Vec::with_capacity(n);
        for (c, d, a) in results {
            data.extend_from_slice(&c);
            alpha.push(a);
            depth.push(if a >= self.config.depth_alpha_threshold && a > 0.0 {
                d / a
            } else {
                0.0
            });
        }
        Rendered {
            image: Image {
                width: self.width,
                height: self.height,
                channels: 3,
                data,
            },
            depth: DepthMap {
                width: self.width,
                height: self.height,
                data: depth,
            },
            alpha,
        }
    }
}

/// Renders color, expected depth and alpha. Flags [`Warning::AllCulled`]
/// when no Gaussian survives projection.
pub fn rasterize(set: &GaussianSet, cam: &Camera, config: &RenderConfig) -> Result<Flagged<Rendered>, RenderError> {
    let proj = project(set, cam, config)?;
    let out = proj.render();
    Ok(if proj.is_empty() {
        Flagged::warn(out, Warning::AllCulled)
    } else {
        Flagged::ok(out)
    })
}

#[derive(Debug, Clone, Copy, Default)]
struct ScreenGrad {
    mean: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
}

/// Gradients of `Σ grad_image · image` with respect to every Gaussian.
///
/// The result is indexed like `set.gaussians`; Gaussians that touch no
/// pixel get zero gradients.
pub fn rasterize_backward(
    set: &GaussianSet,
    cam: &Camera,
    config: &RenderConfig,
    grad_image: &Image,
) -> Result<Vec<GaussianGrad>, RenderError> {
    if grad_image.width != cam.width || grad_image.height != cam.height || grad_image.channels != 3 {
        return Err(RenderError::GradientShape {
            expected: format!("{}x{}x3", cam.width, cam.height),
            got: format!("{}x{}x{}", grad_image.width, grad_image.height, grad_image.channels),
        });
    }
    let proj = project(set, cam, config)?;
    let mut screen = vec![ScreenGrad::default(); proj.splats.len()];
    let mut alphas: Vec<(f64, f64, f64, f64, f64)> = Vec::new();
    for idx in 0..proj.width * proj.height {
        let g = grad_image.pixel(idx % proj.width, idx / proj.width);
        if g.iter().all(|v| *v == 0.0) {
            continue;
        }
        let x = (idx % proj.width) as f64;
        let y = (idx / proj.width) as f64;
        // replay the forward pass, recording (alpha, gaussian value, dx, dy, T)
        alphas.clear();
        let mut t = 1.0;
        for &si in &proj.pixels[idx] {
            let s = &proj.splats[si as usize];
            let (alpha, gval, dx, dy) = splat_alpha(s, x, y);
            alphas.push((alpha, gval, dx, dy, t));
            t *= 1.0 - alpha;
            if t < config.min_transmittance {
                break;
            }
        }
        // color accumulated behind the current splat, starting with the background
        let mut behind = [0.0; 3];
        for ch in 0..3 {
            behind[ch] = t * config.background[ch];
        }
        for (k, &(alpha, gval, dx, dy, t_k)) in alphas.iter().enumerate().rev() {
            let si = proj.pixels[idx][k] as usize;
            let s = &proj.splats[si];
            let sg = &mut screen[si];
            let mut d_alpha = 0.0;
            for ch in 0..3 {
                sg.color[ch] += g[ch] * alpha * t_k;
                d_alpha += g[ch] * (s.frag.color[ch] * t_k - behind[ch] / (1.0 - alpha));
            }
            for ch in 0..3 {
                behind[ch] += s.frag.color[ch] * alpha * t_k;
            }
            sg.opacity += d_alpha * gval;
            let d_power = d_alpha * alpha;
            let [a, b, c] = s.conic;
            sg.mean[0] += d_power * (a * dx + b * dy);
            sg.mean[1] += d_power * (b * dx + c * dy);
            sg.conic[0] += d_power * (-0.5 * dx * dx);
            sg.conic[1] += d_power * (-dx * dy);
            sg.conic[2] += d_power * (-0.5 * dy * dy);
        }
    }

    let w = cam.rotation_matrix();
    let mut out = vec![GaussianGrad::default(); set.len()];
    for (s, sg) in proj.splats.iter().zip(&screen) {
        let g = &set.gaussians[s.source];
        out[s.source] = chain_to_attributes(g, cam, &w, config.cov_regularizer, s, sg);
    }
    Ok(out)
}

fn chain_to_attributes(
    g: &GaussianAttributes,
    cam: &Camera,
    w: &Matrix3<f64>,
    reg: f64,
    s: &Splat,
    sg: &ScreenGrad,
) -> GaussianGrad {
    let geo = geometry(g, cam, w, reg);
    let mut out = GaussianGrad {
        color: sg.color,
        ..Default::default()
    };
    let o = s.frag.opacity;
    out.opacity_logit = sg.opacity * o * (1.0 - o);

    // conic entries as a symmetric matrix gradient: the off-diagonal variable
    // appears twice, so each entry gets half its gradient
    let g_q = Matrix2::new(sg.conic[0], 0.5 * sg.conic[1], 0.5 * sg.conic[1], sg.conic[2]);
    let q = geo.cov2d.try_inverse().unwrap_or_else(Matrix2::zeros);
    let g_cov2d = -(q * g_q * q);
    let g_cov_cam = geo.jac.transpose() * g_cov2d * geo.jac;
    let g_jac = 2.0 * g_cov2d * geo.jac * geo.cov_cam;
    let g_cov3 = geo.world_rot.transpose() * g_cov_cam * geo.world_rot;
    let l = geo.gauss_rot * Matrix3::from_diagonal(&geo.scale);
    let g_l = 2.0 * g_cov3 * l;
    let g_rot = g_l * Matrix3::from_diagonal(&geo.scale);
    let rt_gl = geo.gauss_rot.transpose() * g_l;
    for i in 0..3 {
        out.log_scale[i] = rt_gl[(i, i)] * geo.scale[i];
    }

    let (qu, norm) = unit_quat(&g.rotation);
    let [qw, qx, qy, qz] = qu;
    let d_rw = Matrix3::new(
        0.0,
        -2.0 * qz,
        2.0 * qy,
        2.0 * qz,
        0.0,
        -2.0 * qx,
        -2.0 * qy,
        2.0 * qx,
        0.0,
    );
    let d_rx = Matrix3::new(
        0.0,
        2.0 * qy,
        2.0 * qz,
        2.0 * qy,
        -4.0 * qx,
        -2.0 * qw,
        2.0 * qz,
        2.0 * qw,
        -4.0 * qx,
    );
    let d_ry = Matrix3::new(
        -4.0 * qy,
        2.0 * qx,
        2.0 * qw,
        2.0 * qx,
        0.0,
        2.0 * qz,
        -2.0 * qw,
        2.0 * qz,
        -4.0 * qy,
    );
    let d_rz = Matrix3::new(
        -4.0 * qz,
        -2.0 * qw,
        2.0 * qx,
        2.0 * qw,
        -4.0 * qz,
        2.0 * qy,
        2.0 * qx,
        2.0 * qy,
        0.0,
    );
    let g_unit = [
        g_rot.component_mul(&d_rw).sum(),
        g_rot.component_mul(&d_rx).sum(),
        g_rot.component_mul(&d_ry).sum(),
        g_rot.component_mul(&d_rz).sum(),
    ];
    if norm > 0.0 {
        let dot: f64 = (0..4).map(|i| g_unit[i] * qu[i]).sum();
        for i in 0..4 {
            out.rotation[i] = (g_unit[i] - qu[i] * dot) / norm;
        }
    }

    // mean and Jacobian both depend on the camera-frame position
    let t = geo.cam_point;
    let (fx, fy) = (cam.fx, cam.fy);
    let tz2 = t.z * t.z;
    let tz3 = tz2 * t.z;
    let mut g_t = Vector3::new(
        sg.mean[0] * fx / t.z,
        sg.mean[1] * fy / t.z,
        -sg.mean[0] * fx * t.x / tz2 - sg.mean[1] * fy * t.y / tz2,
    );
    g_t.z += g_jac[(0, 0)] * (-fx / tz2) + g_jac[(1, 1)] * (-fy / tz2);
    g_t.x += g_jac[(0, 2)] * (-fx / tz2);
    g_t.z += g_jac[(0, 2)] * (2.0 * fx * t.x / tz3);
    g_t.y += g_jac[(1, 2)] * (-fy / tz2);
    g_t.z += g_jac[(1, 2)] * (2.0 * fy * t.y / tz3);
    let g_p = w.transpose() * g_t;
    out.position = [g_p.x, g_p.y, g_p.z];
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use jga_core::Cube;

    fn axis_camera(size: usize) -> Camera {
        Camera::look_at([0.0, 0.0, -3.0], [0.0; 3], [0.0, -1.0, 0.0], 20.0, 20.0, size, size)
    }

    fn set_of(gs: Vec<GaussianAttributes>) -> GaussianSet {
        GaussianSet::new(gs, Cube::default()).unwrap()
    }

    #[test]
    fn opaque_center_gaussian_shows_its_color() {
        let cam = axis_camera(17);
        let g = GaussianAttributes {
            position: [0.0; 3],
            color: [0.2, 0.7, 0.4],
            log_scale: [(0.3f64).ln(); 3],
            opacity_logit: 30.0,
            ..Default::default()
        };
        let r = rasterize(&set_of(vec![g]), &cam, &RenderConfig::default())
            .unwrap()
            .value;
        let (cx, cy) = (cam.cx as usize, cam.cy as usize);
        for ch in 0..3 {
            assert!((r.image.get(cx, cy, ch) - g.color[ch]).abs() < 1e-3);
        }
        let center_alpha = r.alpha[cy * 17 + cx];
        assert!(r.alpha.iter().all(|a| *a <= center_alpha));
        assert!((r.depth.get(cx, cy) - 3.0).abs() < 1e-6);
    }

    #[test]
    fn culled_scene_is_background_and_flagged() {
        let cam = axis_camera(8);
        let g = GaussianAttributes {
            position: [0.0, 0.0, 0.5],
            ..Default::default()
        };
        // camera looks toward -z, the Gaussian sits behind it
        let cam_behind = Camera::look_at([0.0, 0.0, -0.5], [0.0, 0.0, -3.0], [0.0, -1.0, 0.0], 20.0, 20.0, 8, 8);
        let out = rasterize(&set_of(vec![g]), &cam_behind, &RenderConfig::default()).unwrap();
        assert_eq!(out.warning, Some(Warning::AllCulled));
        assert!(out.value.image.data.iter().all(|v| *v == 1.0));
        let empty = rasterize(&set_of(vec![]), &cam, &RenderConfig::default()).unwrap();
        assert!(empty.is_flagged());
    }

    #[test]
    fn two_layer_compositing_matches_hand_blend() {
        let cam = axis_camera(9);
        let front = GaussianAttributes {
            position: [0.0, 0.0, -0.5],
            color: [1.0, 0.0, 0.0],
            log_scale: [(0.2f64).ln(); 3],
            opacity_logit: 0.3,
            ..Default::default()
        };
        let back = GaussianAttributes {
            position: [0.0, 0.0, 0.5],
            color: [0.0, 0.0, 1.0],
            log_scale: [(0.25f64).ln(); 3],
            opacity_logit: 1.1,
            ..Default::default()
        };
        let config = RenderConfig {
            background: [0.0; 3],
            ..RenderConfig::exact()
        };
        let r = rasterize(&set_of(vec![back, front]), &cam, &config).unwrap().value;
        let (px, py) = (5.0, 3.0);
        let proj = project(&set_of(vec![back, front]), &cam, &config).unwrap();
        let alpha_of = |g: &GaussianAttributes| {
            let f = proj.fragments().find(|(_, f)| f.color == g.color).unwrap().1;
            let d = Vector2::new(px - f.mean[0], py - f.mean[1]);
            let cov = Matrix2::new(f.cov[0][0], f.cov[0][1], f.cov[1][0], f.cov[1][1]);
            let m = (d.transpose() * cov.try_inverse().unwrap() * d)[(0, 0)];
            g.opacity() * (-0.5 * m).exp()
        };
        let (a1, a2) = (alpha_of(&front), alpha_of(&back));
        let expect = [a1, 0.0, a2 * (1.0 - a1)];
        for ch in 0..3 {
            assert!((r.image.get(5, 3, ch) - expect[ch]).abs() < 1e-12);
        }
    }
}
