//! Static 3-d tree for nearest-neighbour queries.
//!
//! Ties at equal distance resolve to the lowest point index, which keeps
//! attribute association and normal estimation deterministic.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    // Node i covers order[lo..hi]; interior nodes split at order[mid] before recursion.
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy)]
struct Node {
    lo: usize,
    hi: usize,
    axis: usize,
    split: f64,
    left: Option<usize>,
    right: Option<usize>,
}

const LEAF: usize = 8;

#[derive(PartialEq)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2.total_cmp(&other.dist2).then(self.index.cmp(&other.index))
    }
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

impl KdTree {
    pub fn new(points: &[[f64; 3]]) -> Self {
        let mut tree = Self {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    fn build(&mut self, lo: usize, hi: usize) -> usize {
        let id = self.nodes.len();
        // split on the axis of largest extent
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for &i in &self.order[lo..hi] {
            for a in 0..3 {
                min[a] = min[a].min(self.points[i][a]);
                max[a] = max[a].max(self.points[i][a]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (max[a] - min[a]).total_cmp(&(max[b] - min[b])))
            .unwrap_or(0);
        self.nodes.push(Node {
            lo,
            hi,
            axis,
            split: 0.0,
            left: None,
            right: None,
        });
        if hi - lo > LEAF {
            let mid = (lo + hi) / 2;
            let pts = &self.points;
            self.order[lo..hi]
                .select_nth_unstable_by(mid - lo, |&i, &j| pts[i][axis].total_cmp(&pts[j][axis]).then(i.cmp(&j)));
            self.nodes[id].split = self.points[self.order[mid]][axis];
            let left = self.build(lo, mid);
            let right = self.build(mid, hi);
            self.nodes[id].left = Some(left);
            self.nodes[id].right = Some(right);
        }
        id
    }

    /// Index and squared distance of the nearest point.
    pub fn nearest(&self, q: &[f64; 3]) -> Option<(usize, f64)> {
        self.k_nearest(q, 1).into_iter().next()
    }

    /// The `k` nearest points ordered by (distance, index).
    pub fn k_nearest(&self, q: &[f64; 3], k: usize) -> Vec<(usize, f64)> {
        if self.nodes.is_empty() || k == 0 {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.search(0, q, k, &mut heap);
        let mut out: Vec<(usize, f64)> = heap.into_iter().map(|c| (c.index, c.dist2)).collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }

    fn search(&self, node: usize, q: &[f64; 3], k: usize, heap: &mut BinaryHeap<Candidate>) {
        let n = self.nodes[node];
        match (n.left, n.right) {
            (Some(l), Some(r)) => {
                let diff = q[n.axis] - n.split;
                let (near, far) = if diff < 0.0 { (l, r) } else { (r, l) };
                self.search(near, q, k, heap);
                let worst = if heap.len() < k {
                    f64::INFINITY
                } else {
                    heap.peek().map(|c| c.dist2).unwrap_or(f64::INFINITY)
                };
                // `<=` so equal-distance points with lower indices are still visited
                if diff * diff <= worst {
                    self.search(far, q, k, heap);
                }
            }
            _ => {
                for &i in &self.order[n.lo..n.hi] {
                    let cand = Candidate {
                        dist2: dist2(q, &self.points[i]),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if let Some(top) = heap.peek() {
                        if cand < *top {
                            heap.pop();
                            heap.push(cand);
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<[f64; 3]> = (0..300).map(|_| [0; 3].map(|_| rng.gen_range(-1.0..1.0))).collect();
        let tree = KdTree::new(&pts);
        for _ in 0..200 {
            let q = [0; 3].map(|_| rng.gen_range(-1.2..1.2));
            let mut brute: Vec<(usize, f64)> = pts.iter().enumerate().map(|(i, p)| (i, dist2(&q, p))).collect();
            brute.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            assert_eq!(tree.k_nearest(&q, 7), brute[..7].to_vec());
        }
    }

    #[test]
    fn ties_resolve_to_lowest_index() {
        let pts = vec![[1.0, 0.0, 0.0]; 20];
        let tree = KdTree::new(&pts);
        assert_eq!(tree.nearest(&[0.0; 3]).unwrap().0, 0);
        let pts = vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]];
        assert_eq!(KdTree::new(&pts).nearest(&[0.0; 3]).unwrap().0, 0);
    }

    #[test]
    fn empty_tree() {
        assert!(KdTree::new(&[]).nearest(&[0.0; 3]).is_none());
    }
}
