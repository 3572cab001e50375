//! Deterministic synthetic scenes: textured surface Gaussians, ring-camera
//! renders of them, and triangle meshes of the same surfaces.
//!
//! Surface points are snapped per voxel: every sample is replaced by the point
//! of the surface nearest to the centre of the voxel it falls in, and voxels
//! whose nearest point lies outside them are skipped. Each occupied voxel then
//! holds exactly one Gaussian whose sub-voxel offset is a function of the
//! geometry alone.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use jga_core::voxel::locate;
use jga_core::{Camera, Coord, Cube, DepthMap, GaussianAttributes, GaussianSet, Image, SmplMesh};
use jga_render::{rasterize, RenderConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::IoError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneKind {
    Sphere,
    Box,
    CapsulePerson,
}

impl std::str::FromStr for SceneKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sphere" => Ok(Self::Sphere),
            "box" => Ok(Self::Box),
            "capsule-person" => Ok(Self::CapsulePerson),
            other => Err(format!("unknown scene kind `{other}` (sphere, box, capsule-person)")),
        }
    }
}

pub const SPHERE_RADIUS: f64 = 0.5;
const BOX_HALF: [f64; 3] = [0.35, 0.45, 0.3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthOptions {
    /// Voxel grid the surface Gaussians are snapped to.
    pub resolution: usize,
    pub views: usize,
    pub image_size: usize,
    pub camera_distance: f64,
    /// Camera elevation above the horizontal plane, radians.
    pub elevation: f64,
    /// Focal length as a multiple of the image size.
    pub focal: f64,
    /// Gaussian standard deviation as a fraction of the voxel edge.
    pub scale: f64,
    pub opacity: f64,
    /// Tessellation of the coarse proxy and the fine reference surface.
    pub proxy_detail: usize,
    pub surface_detail: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            resolution: 64,
            views: 8,
            image_size: 48,
            camera_distance: 2.8,
            elevation: 0.35,
            focal: 1.4,
            scale: 0.7,
            opacity: 0.9,
            proxy_detail: 6,
            surface_detail: 24,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthView {
    pub camera: Camera,
    pub image: Image,
    pub depth: DepthMap,
    /// Held-out views are never used for training.
    pub held_out: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub kind: SceneKind,
    pub gaussians: GaussianSet,
    /// View 0 is the single input view.
    pub views: Vec<SynthView>,
    /// Coarse closed mesh standing in for a body model.
    pub proxy: SmplMesh,
    /// Finely tessellated reference surface for point-to-surface metrics.
    pub surface: SmplMesh,
}

#[derive(Debug, Clone, Copy)]
struct Capsule {
    a: [f64; 3],
    b: [f64; 3],
    r: f64,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Orthonormal frame whose third axis is `axis`.
fn frame(axis: [f64; 3]) -> ([f64; 3], [f64; 3], [f64; 3]) {
    let n = norm(axis);
    let e3 = if n < 1e-12 {
        [0.0, 1.0, 0.0]
    } else {
        scale(axis, 1.0 / n)
    };
    let helper = if e3[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    let e1 = cross(helper, e3);
    let e1 = scale(e1, 1.0 / norm(e1));
    (e1, cross(e3, e1), e3)
}

impl Capsule {
    fn axis_point(&self, c: [f64; 3]) -> [f64; 3] {
        let ab = sub(self.b, self.a);
        let len2 = dot(ab, ab);
        let t = if len2 < 1e-18 {
            0.0
        } else {
            (dot(sub(c, self.a), ab) / len2).clamp(0.0, 1.0)
        };
        add(self.a, scale(ab, t))
    }

    fn sdf(&self, c: [f64; 3]) -> f64 {
        norm(sub(c, self.axis_point(c))) - self.r
    }

    fn nearest(&self, c: [f64; 3]) -> [f64; 3] {
        let s = self.axis_point(c);
        let d = sub(c, s);
        let n = norm(d);
        let dir = if n < 1e-12 {
            frame(sub(self.b, self.a)).0
        } else {
            scale(d, 1.0 / n)
        };
        add(s, scale(dir, self.r))
    }

    fn area(&self) -> f64 {
        2.0 * PI * self.r * norm(sub(self.b, self.a)) + 4.0 * PI * self.r * self.r
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> [f64; 3] {
        let len = norm(sub(self.b, self.a));
        let cyl = 2.0 * PI * self.r * len;
        let (e1, e2, e3) = frame(sub(self.b, self.a));
        if rng.gen::<f64>() * self.area() < cyl {
            let t: f64 = rng.gen();
            let phi = rng.gen_range(0.0..2.0 * PI);
            let s = add(self.a, scale(sub(self.b, self.a), t));
            add(s, add(scale(e1, self.r * phi.cos()), scale(e2, self.r * phi.sin())))
        } else {
            let d = unit_vector(rng);
            let center = if dot(d, e3) < 0.0 { self.a } else { self.b };
            add(center, scale(d, self.r))
        }
    }

    fn mesh(&self, detail: usize) -> SmplMesh {
        let (e1, e2, e3) = frame(sub(self.b, self.a));
        let lat = 2 * detail.max(2);
        let lon = 2 * lat;
        let point = |center: [f64; 3], theta: f64, phi: f64| {
            let radial = add(scale(e1, phi.cos()), scale(e2, phi.sin()));
            add(
                center,
                scale(add(scale(radial, theta.sin()), scale(e3, theta.cos())), self.r),
            )
        };
        // theta measured from the +axis pole at b; the equator ring is doubled
        // so the cylinder spans from b down to a (unless the axis is empty)
        let mut rings = Vec::new();
        for i in 1..lat {
            let theta = PI * i as f64 / lat as f64;
            if theta <= PI / 2.0 {
                rings.push((self.b, theta));
            }
            if theta >= PI / 2.0 && !(theta == PI / 2.0 && self.a == self.b) {
                rings.push((self.a, theta));
            }
        }
        let ring_points: Vec<Vec<[f64; 3]>> = rings
            .iter()
            .map(|&(c, t)| {
                (0..lon)
                    .map(|j| point(c, t, 2.0 * PI * j as f64 / lon as f64))
                    .collect()
            })
            .collect();
        ring_mesh(
            add(self.b, scale(e3, self.r)),
            sub(self.a, scale(e3, self.r)),
            &ring_points,
        )
    }
}

/// Closed mesh from a top pole, rings of equal length and a bottom pole.
fn ring_mesh(top: [f64; 3], bottom: [f64; 3], rings: &[Vec<[f64; 3]>]) -> SmplMesh {
    let m = rings[0].len();
    let mut vertices = vec![top];
    for r in rings {
        vertices.extend_from_slice(r);
    }
    let bottom_idx = vertices.len();
    vertices.push(bottom);
    let at = |ring: usize, j: usize| 1 + ring * m + j % m;
    let mut faces = Vec::new();
    for j in 0..m {
        faces.push([0, at(0, j + 1), at(0, j)]);
    }
    for r in 0..rings.len() - 1 {
        for j in 0..m {
            faces.push([at(r, j), at(r, j + 1), at(r + 1, j + 1)]);
            faces.push([at(r, j), at(r + 1, j + 1), at(r + 1, j)]);
        }
    }
    let last = rings.len() - 1;
    for j in 0..m {
        faces.push([bottom_idx, at(last, j), at(last, j + 1)]);
    }
    SmplMesh::new(vertices, faces).expect("indices in range")
}

fn merge(meshes: Vec<SmplMesh>) -> SmplMesh {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for m in meshes {
        let base = vertices.len();
        vertices.extend(m.vertices);
        faces.extend(m.faces.into_iter().map(|f| f.map(|i| i + base)));
    }
    SmplMesh::new(vertices, faces).expect("indices in range")
}

fn unit_vector(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v = [0; 3].map(|_| rng.gen_range(-1.0..1.0));
        let n = norm(v);
        if n > 1e-3 && n <= 1.0 {
            return scale(v, 1.0 / n);
        }
    }
}

fn person() -> Vec<Capsule> {
    let c = |a: [f64; 3], b: [f64; 3], r: f64| Capsule { a, b, r };
    vec![
        c([0.0, -0.15, 0.0], [0.0, 0.25, 0.0], 0.18),
        c([0.0, 0.55, 0.0], [0.0, 0.55, 0.0], 0.14),
        c([-0.24, 0.28, 0.0], [-0.55, -0.05, 0.0], 0.06),
        c([0.24, 0.28, 0.0], [0.55, -0.05, 0.0], 0.06),
        c([-0.1, -0.25, 0.0], [-0.13, -0.82, 0.0], 0.08),
        c([0.1, -0.25, 0.0], [0.13, -0.82, 0.0], 0.08),
    ]
}

enum Shape {
    Sphere,
    Box,
    Capsules(Vec<Capsule>),
}

impl Shape {
    fn of(kind: SceneKind) -> Self {
        match kind {
            SceneKind::Sphere => Self::Sphere,
            SceneKind::Box => Self::Box,
            SceneKind::CapsulePerson => Self::Capsules(person()),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> [f64; 3] {
        match self {
            Self::Sphere => scale(unit_vector(rng), SPHERE_RADIUS),
            Self::Box => {
                let h = BOX_HALF;
                let areas = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
                let total: f64 = areas.iter().sum();
                let mut u = rng.gen::<f64>() * total;
                let mut axis = 2;
                for (i, a) in areas.iter().enumerate() {
                    if u < *a {
                        axis = i;
                        break;
                    }
                    u -= a;
                }
                let mut p = [0; 3].map(|_| rng.gen_range(-1.0..1.0));
                for i in 0..3 {
                    p[i] *= h[i];
                }
                p[axis] = if rng.gen::<bool>() { h[axis] } else { -h[axis] };
                p
            }
            Self::Capsules(caps) => {
                let total: f64 = caps.iter().map(Capsule::area).sum();
                // rejection keeps only points on the outer surface of the union
                loop {
                    let mut u = rng.gen::<f64>() * total;
                    let mut chosen = caps.len() - 1;
                    for (i, c) in caps.iter().enumerate() {
                        if u < c.area() {
                            chosen = i;
                            break;
                        }
                        u -= c.area();
                    }
                    let p = caps[chosen].sample(rng);
                    if self.on_surface(p) {
                        return p;
                    }
                }
            }
        }
    }

    fn nearest(&self, c: [f64; 3]) -> [f64; 3] {
        match self {
            Self::Sphere => {
                let n = norm(c);
                if n < 1e-12 {
                    [SPHERE_RADIUS, 0.0, 0.0]
                } else {
                    scale(c, SPHERE_RADIUS / n)
                }
            }
            Self::Box => {
                let h = BOX_HALF;
                let clamped = [0, 1, 2].map(|i| c[i].clamp(-h[i], h[i]));
                if clamped != c {
                    return clamped;
                }
                let axis = (0..3)
                    .min_by(|&a, &b| (h[a] - c[a].abs()).total_cmp(&(h[b] - c[b].abs())))
                    .unwrap();
                let mut p = c;
                p[axis] = if c[axis] < 0.0 { -h[axis] } else { h[axis] };
                p
            }
            Self::Capsules(caps) => {
                let best = caps
                    .iter()
                    .min_by(|a, b| a.sdf(c).total_cmp(&b.sdf(c)))
                    .expect("non-empty capsule list");
                best.nearest(c)
            }
        }
    }

    fn on_surface(&self, p: [f64; 3]) -> bool {
        match self {
            Self::Sphere => (norm(p) - SPHERE_RADIUS).abs() < 1e-9,
            Self::Box => {
                let d = (0..3)
                    .map(|i| p[i].abs() - BOX_HALF[i])
                    .fold(f64::NEG_INFINITY, f64::max);
                d.abs() < 1e-9
            }
            Self::Capsules(caps) => {
                let sdf = caps.iter().map(|c| c.sdf(p)).fold(f64::INFINITY, f64::min);
                sdf.abs() < 1e-9
            }
        }
    }

    fn mesh(&self, detail: usize) -> SmplMesh {
        match self {
            Self::Sphere => Capsule {
                a: [0.0; 3],
                b: [0.0; 3],
                r: SPHERE_RADIUS,
            }
            .mesh(detail),
            Self::Box => box_mesh(detail),
            Self::Capsules(caps) => merge(caps.iter().map(|c| c.mesh(detail)).collect()),
        }
    }
}

fn box_mesh(detail: usize) -> SmplMesh {
    let n = detail.max(1);
    let h = BOX_HALF;
    let mut meshes = Vec::new();
    for axis in 0..3 {
        for sign in [-1.0, 1.0] {
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            let mut vertices = Vec::new();
            for i in 0..=n {
                for j in 0..=n {
                    let mut p = [0.0; 3];
                    p[axis] = sign * h[axis];
                    p[u] = h[u] * (2.0 * i as f64 / n as f64 - 1.0);
                    p[v] = h[v] * (2.0 * j as f64 / n as f64 - 1.0);
                    vertices.push(p);
                }
            }
            let id = |i: usize, j: usize| i * (n + 1) + j;
            let mut faces = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
                    if sign > 0.0 {
                        faces.push([a, b, c]);
                        faces.push([a, c, d]);
                    } else {
                        faces.push([a, c, b]);
                        faces.push([a, d, c]);
                    }
                }
            }
            meshes.push(SmplMesh::new(vertices, faces).expect("indices in range"));
        }
    }
    merge(meshes)
}

/// Smooth seeded color field with values in `[0.05, 0.95]`.
struct Texture {
    waves: [[([f64; 3], f64, f64); 2]; 3],
}

impl Texture {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let mut wave = |amp: f64| {
            let dir = unit_vector(rng);
            let freq = rng.gen_range(2.0..4.0);
            (scale(dir, freq), rng.gen_range(0.0..2.0 * PI), amp)
        };
        let waves = [0; 3].map(|_| [wave(0.25), wave(0.15)]);
        Self { waves }
    }

    fn color(&self, p: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|c| {
            let v: f64 = 0.5
                + self.waves[c]
                    .iter()
                    .map(|(k, phase, amp)| amp * (dot(*k, p) + phase).sin())
                    .sum::<f64>();
            v.clamp(0.05, 0.95)
        })
    }
}

/// Ring of cameras around the origin with +y up. Odd-numbered views are held out.
pub fn ring_cameras(opts: &SynthOptions) -> Vec<Camera> {
    let s = opts.image_size;
    (0..opts.views)
        .map(|k| {
            let az = 2.0 * PI * k as f64 / opts.views as f64;
            let d = opts.camera_distance;
            let eye = [
                d * opts.elevation.cos() * az.sin(),
                d * opts.elevation.sin(),
                -d * opts.elevation.cos() * az.cos(),
            ];
            let f = opts.focal * s as f64;
            Camera::look_at(eye, [0.0; 3], [0.0, 1.0, 0.0], f, f, s, s)
        })
        .collect()
}

pub fn synth_scene(kind: SceneKind, count: usize, seed: u64) -> Result<SynthScene, IoError> {
    synth_scene_with(kind, count, seed, &SynthOptions::default())
}

/// Builds a scene from `count` surface samples (at most one Gaussian per voxel
/// survives snapping, so the set may be smaller than `count`).
pub fn synth_scene_with(kind: SceneKind, count: usize, seed: u64, opts: &SynthOptions) -> Result<SynthScene, IoError> {
    if count == 0 {
        return Err(IoError::Config {
            path: "synth".into(),
            message: "count must be at least 1".into(),
        });
    }
    if !jga_core::voxel::is_power_of_two(opts.resolution) || opts.views == 0 || opts.image_size == 0 {
        return Err(IoError::Config {
            path: "synth".into(),
            message: "resolution must be a power of two and views, image_size positive".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let texture = Texture::new(&mut rng);
    let shape = Shape::of(kind);
    let bounds = Cube::default();
    let r = opts.resolution;
    let voxel = bounds.side() / r as f64;

    let mut snapped: BTreeMap<Coord, [f64; 3]> = BTreeMap::new();
    for _ in 0..count {
        let p = shape.sample(&mut rng);
        let (coord, _) = locate(&p, &bounds, r);
        if snapped.contains_key(&coord) {
            continue;
        }
        let center = [0, 1, 2].map(|i| bounds.min + (coord[i] as f64 + 0.5) * voxel);
        let q = shape.nearest(center);
        if locate(&q, &bounds, r).0 == coord && shape.on_surface(q) {
            snapped.insert(coord, q);
        }
    }

    let log_scale = (opts.scale * voxel).ln();
    let opacity_logit = jga_core::logit(opts.opacity);
    let gaussians: Vec<GaussianAttributes> = snapped
        .values()
        .map(|&q| GaussianAttributes {
            position: q,
            color: texture.color(q),
            log_scale: [log_scale; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_logit,
        })
        .collect();
    let gaussians = GaussianSet::new(gaussians, bounds)?;

    let config = RenderConfig::default();
    let mut views = Vec::with_capacity(opts.views);
    for (k, camera) in ring_cameras(opts).into_iter().enumerate() {
        let out = rasterize(&gaussians, &camera, &config)?.into_inner();
        views.push(SynthView {
            camera,
            image: out.image.clamped(),
            depth: out.depth,
            held_out: k % 2 == 1,
        });
    }

    Ok(SynthScene {
        kind,
        gaussians,
        views,
        proxy: shape.mesh(opts.proxy_detail),
        surface: shape.mesh(opts.surface_detail),
    })
}
