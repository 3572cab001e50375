use jga_core::SmplMesh;
use nalgebra::Vector3;
use rayon::prelude::*;

use crate::MetricsError;

type V = Vector3<f64>;

/// Closest point to `p` on triangle `(a, b, c)` by Voronoi-region tests.
pub fn closest_point_on_triangle(p: [f64; 3], tri: [[f64; 3]; 3]) -> [f64; 3] {
    let (p, a, b, c) = (V::from(p), V::from(tri[0]), V::from(tri[1]), V::from(tri[2]));
    let q = closest(p, a, b, c);
    [q.x, q.y, q.z]
}

fn closest(p: V, a: V, b: V, c: V) -> V {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

struct Tri {
    a: V,
    b: V,
    c: V,
    center: V,
    radius: f64,
}

/// Mean exact point-to-triangle distance from `points` to `mesh`.
pub fn p2s(points: &[[f64; 3]], mesh: &SmplMesh) -> Result<f64, MetricsError> {
    if points.is_empty() {
        return Err(MetricsError::Empty("point set"));
    }
    if mesh.faces.is_empty() {
        return Err(MetricsError::Empty("mesh"));
    }
    mesh.validate()?;
    let mut tris = Vec::with_capacity(mesh.faces.len());
    for f in 0..mesh.faces.len() {
        let [a, b, c] = mesh.triangle(f).map(V::from);
        if (b - a).cross(&(c - a)).norm() <= 1e-300 {
            return Err(MetricsError::DegenerateFace(f));
        }
        let center = (a + b + c) / 3.0;
        let radius = (a - center).norm().max((b - center).norm()).max((c - center).norm());
        tris.push(Tri {
            a,
            b,
            c,
            center,
            radius,
        });
    }
    let total: f64 = points
        .par_iter()
        .map(|p| {
            let p = V::from(*p);
            let mut best = f64::INFINITY;
            for t in &tris {
                // bounding-sphere rejection
                let lower = (p - t.center).norm() - t.radius;
                if lower >= best {
                    continue;
                }
                best = best.min((closest(p, t.a, t.b, t.c) - p).norm());
            }
            best
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    Ok(total / points.len() as f64)
}
