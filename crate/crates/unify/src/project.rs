use jga_core::{Camera, Cube, DepthMap, Flagged, Image, SmplMesh, Warning};

use crate::UnifyError;

/// World-space points with the RGB of the pixel each came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ColoredCloud {
    pub points: Vec<[f64; 3]>,
    pub colors: Vec<[f64; 3]>,
}

impl ColoredCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn check_dims(depth: &DepthMap, rgb: &Image, cam: &Camera) -> Result<(), UnifyError> {
    if depth.width != cam.width || depth.height != cam.height || !(rgb.width == cam.width && rgb.height == cam.height) {
        return Err(UnifyError::Shape(format!(
            "depth {}×{}, image {}×{} and camera {}×{} must agree",
            depth.width, depth.height, rgb.width, rgb.height, cam.width, cam.height
        )));
    }
    if rgb.channels < 3 {
        return Err(UnifyError::Shape(format!(
            "image has {} channels, need 3",
            rgb.channels
        )));
    }
    Ok(())
}

/// Lifts every pixel with positive depth to `d·K⁻¹·(u, v, 1)ᵀ` in world space.
/// Pixel `(x, y)` sits at `(u, v) = (x, y)`.
pub fn backproject_depth(depth: &DepthMap, rgb: &Image, cam: &Camera) -> Result<Flagged<ColoredCloud>, UnifyError> {
    check_dims(depth, rgb, cam)?;
    let mut cloud = ColoredCloud::default();
    for y in 0..depth.height {
        for x in 0..depth.width {
            let d = depth.get(x, y);
            if d > 0.0 {
                cloud.points.push(cam.unproject(x as f64, y as f64, d));
                let p = rgb.pixel(x, y);
                cloud.colors.push([p[0], p[1], p[2]]);
            }
        }
    }
    Ok(if cloud.is_empty() {
        Flagged::warn(cloud, Warning::EmptyCloud)
    } else {
        Flagged::ok(cloud)
    })
}

/// Visibility tolerance of two voxel edges.
pub fn default_tolerance(bounds: &Cube, resolution: usize) -> f64 {
    2.0 * bounds.side() / resolution as f64
}

/// Marks a vertex visible when it projects inside the image and its camera
/// depth is at most the depth at the nearest pixel plus `tolerance`; pixels
/// without depth occlude everything. Visible vertices take the bilinearly
/// sampled color, the rest get black.
pub fn color_smpl_by_projection(
    mesh: &SmplMesh,
    rgb: &Image,
    depth: &DepthMap,
    cam: &Camera,
    tolerance: f64,
) -> Result<Flagged<SmplMesh>, UnifyError> {
    check_dims(depth, rgb, cam)?;
    let (w, h) = ((cam.width - 1) as f64, (cam.height - 1) as f64);
    let mut colors = Vec::with_capacity(mesh.vertices.len());
    let mut visible = Vec::with_capacity(mesh.vertices.len());
    for v in &mesh.vertices {
        let seen = cam
            .project(v)
            .filter(|(u, vv, _)| (0.0..=w).contains(u) && (0.0..=h).contains(vv))
            .and_then(|(u, vv, z)| {
                let d = depth.get(u.round() as usize, vv.round() as usize);
                (d > 0.0 && z <= d + tolerance).then_some((u, vv))
            });
        match seen {
            Some((u, vv)) => {
                let c = rgb.bilinear(u, vv);
                colors.push([c[0], c[1], c[2]]);
                visible.push(true);
            }
            None => {
                colors.push([0.0; 3]);
                visible.push(false);
            }
        }
    }
    let any = visible.iter().any(|v| *v);
    let out = SmplMesh {
        vertex_colors: Some(colors),
        visible: Some(visible),
        ..mesh.clone()
    };
    Ok(if any {
        Flagged::ok(out)
    } else {
        Flagged::warn(out, Warning::NoVisibleVertices)
    })
}
