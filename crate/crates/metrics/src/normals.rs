use std::cmp::Reverse;
use std::collections::BinaryHeap;

use jga_core::KdTree;
use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use crate::MetricsError;

pub const DEFAULT_K: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Normals {
    pub normals: Vec<[f64; 3]>,
    /// Set where the neighbourhood has rank below two.
    pub unreliable: Vec<bool>,
}

fn check_unit(what: &'static str, normals: &[[f64; 3]]) -> Result<(), MetricsError> {
    for (index, n) in normals.iter().enumerate() {
        let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        if !((norm - 1.0).abs() <= 1e-6) {
            return Err(MetricsError::NonUnitNormal { what, index, norm });
        }
    }
    Ok(())
}

/// Mean angle in degrees between each predicted normal and the normal of the
/// nearest reference point.
pub fn normal_error(
    pred_points: &[[f64; 3]],
    pred_normals: &[[f64; 3]],
    gt_points: &[[f64; 3]],
    gt_normals: &[[f64; 3]],
) -> Result<f64, MetricsError> {
    if pred_points.is_empty() {
        return Err(MetricsError::Empty("predicted points"));
    }
    if gt_points.is_empty() {
        return Err(MetricsError::Empty("reference points"));
    }
    for (what, p, n) in [
        ("predicted", pred_points, pred_normals),
        ("reference", gt_points, gt_normals),
    ] {
        if p.len() != n.len() {
            return Err(MetricsError::LengthMismatch {
                what,
                points: p.len(),
                normals: n.len(),
            });
        }
        check_unit(what, n)?;
    }
    let tree = KdTree::new(gt_points);
    let total: f64 = pred_points
        .par_iter()
        .zip(pred_normals)
        .map(|(p, n)| {
            let (j, _) = tree.nearest(p).expect("non-empty tree");
            let g = gt_normals[j];
            let dot = n[0] * g[0] + n[1] * g[1] + n[2] * g[2];
            let cross = [
                n[1] * g[2] - n[2] * g[1],
                n[2] * g[0] - n[0] * g[2],
                n[0] * g[1] - n[1] * g[0],
            ];
            let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
            sin.atan2(dot).to_degrees()
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    Ok(total / pred_points.len() as f64)
}

/// PCA normals over `k` nearest neighbours, consistently oriented by
/// propagation along a minimum spanning tree of the neighbour graph.
///
/// Each connected component starts from its highest-`z` point, whose normal
/// is oriented towards `+z`.
pub fn estimate_normals(points: &[[f64; 3]], k: usize) -> Result<Normals, MetricsError> {
    let n = points.len();
    if k == 0 || n < k + 1 {
        return Err(MetricsError::TooFewPoints { k, n });
    }
    let tree = KdTree::new(points);
    let neighbours: Vec<Vec<usize>> = points
        .par_iter()
        .map(|p| tree.k_nearest(p, k + 1).into_iter().map(|(i, _)| i).collect())
        .collect();
    let (mut normals, unreliable): (Vec<[f64; 3]>, Vec<bool>) =
        neighbours.par_iter().map(|nb| pca_normal(points, nb)).unzip();

    // symmetric neighbour graph
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, nb) in neighbours.iter().enumerate() {
        for &j in nb {
            if j != i {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }

    let dot = |a: &[f64; 3], b: &[f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let mut visited = vec![false; n];
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| points[b][2].total_cmp(&points[a][2]).then(a.cmp(&b)));
    for &root in &order {
        if visited[root] {
            continue;
        }
        if normals[root][2] < 0.0 {
            normals[root] = normals[root].map(|v| -v);
        }
        visited[root] = true;
        // Prim with weight 1 - |n_i . n_j|; heap entries carry their parent
        let mut heap = BinaryHeap::new();
        let push = |heap: &mut BinaryHeap<Reverse<(u64, usize, usize)>>,
                    normals: &[[f64; 3]],
                    from: usize,
                    visited: &[bool]| {
            for &j in &adj[from] {
                if !visited[j] {
                    let w = 1.0 - dot(&normals[from], &normals[j]).abs();
                    heap.push(Reverse((w.max(0.0).to_bits(), j, from)));
                }
            }
        };
        push(&mut heap, &normals, root, &visited);
        while let Some(Reverse((_, j, parent))) = heap.pop() {
            if visited[j] {
                continue;
            }
            visited[j] = true;
            if dot(&normals[parent], &normals[j]) < 0.0 {
                normals[j] = normals[j].map(|v| -v);
            }
            push(&mut heap, &normals, j, &visited);
        }
    }
    Ok(Normals { normals, unreliable })
}

fn pca_normal(points: &[[f64; 3]], nb: &[usize]) -> ([f64; 3], bool) {
    let m = nb.len() as f64;
    let mut mean = Vector3::zeros();
    for &i in nb {
        mean += Vector3::from(points[i]);
    }
    mean /= m;
    let mut cov = Matrix3::zeros();
    for &i in nb {
        let d = Vector3::from(points[i]) - mean;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov / m);
    let mut idx = [0, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let v = eig.eigenvectors.column(idx[0]);
    let (l_mid, l_max) = (eig.eigenvalues[idx[1]], eig.eigenvalues[idx[2]]);
    let unreliable = !(l_mid > 1e-12 * l_max.max(f64::MIN_POSITIVE));
    let norm = v.norm();
    if unreliable || norm == 0.0 {
        return ([0.0, 0.0, 1.0], true);
    }
    ([v[0] / norm, v[1] / norm, v[2] / norm], unreliable)
}
