use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::Vec3;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        lo: usize,
        hi: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Balanced k-d tree over a fixed set of positions.
///
/// Query results are sorted by ascending distance with ties broken by
/// ascending point index, so they are reproducible bit for bit.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<Vec3>,
    perm: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl SpatialIndex {
    pub fn new(points: &[Vec3]) -> Self {
        let mut index = Self {
            points: points.to_vec(),
            perm: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            index.build(0, points.len());
        }
        index
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &Vec3 {
        &self.points[i]
    }

    fn build(&mut self, lo: usize, hi: usize) -> usize {
        let id = self.nodes.len();
        if hi - lo <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { lo, hi });
            return id;
        }
        let mut min = Vec3::repeat(f64::INFINITY);
        let mut max = Vec3::repeat(f64::NEG_INFINITY);
        for &i in &self.perm[lo..hi] {
            min = min.inf(&self.points[i]);
            max = max.sup(&self.points[i]);
        }
        let axis = (max - min).imax();
        let mid = lo + (hi - lo) / 2;
        let points = &self.points;
        self.perm[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        let value = self.points[self.perm[mid]][axis];
        self.nodes.push(Node::Leaf { lo: 0, hi: 0 });
        let left = self.build(lo, mid);
        let right = self.build(mid, hi);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// The `min(k, N)` nearest points to `query`.
    pub fn knn(&self, query: &Vec3, k: usize) -> Vec<usize> {
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(0, query, k, &mut heap);
        let mut out = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| c.index).collect()
    }

    fn knn_rec(&self, node: usize, q: &Vec3, k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { lo, hi } => {
                for &i in &self.perm[lo..hi] {
                    let cand = Candidate {
                        dist2: (self.points[i] - q).norm_squared(),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.knn_rec(near, q, k, heap);
                let full = heap.len() == k;
                if !full || diff * diff <= heap.peek().expect("heap is full").dist2 {
                    self.knn_rec(far, q, k, heap);
                }
            }
        }
    }

    /// All points within `radius` (inclusive) of `query`.
    pub fn within_radius(&self, query: &Vec3, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.points.is_empty() {
            self.radius_rec(0, query, radius * radius, &mut out);
        }
        out.sort();
        out.into_iter().map(|c| c.index).collect()
    }

    fn radius_rec(&self, node: usize, q: &Vec3, r2: f64, out: &mut Vec<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { lo, hi } => {
                for &i in &self.perm[lo..hi] {
                    let dist2 = (self.points[i] - q).norm_squared();
                    if dist2 <= r2 {
                        out.push(Candidate { dist2, index: i });
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.radius_rec(near, q, r2, out);
                if diff * diff <= r2 {
                    self.radius_rec(far, q, r2, out);
                }
            }
        }
    }

    /// k nearest neighbors of every indexed point, excluding the point itself.
    pub fn knn_graph(&self, k: usize) -> Vec<Vec<usize>> {
        (0..self.points.len())
            .map(|i| {
                let mut nbrs = self.knn(&self.points[i], k + 1);
                nbrs.retain(|&j| j != i);
                nbrs.truncate(k);
                nbrs
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_knn(points: &[Vec3], q: &Vec3, k: usize) -> Vec<usize> {
        let mut all: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| ((p - q).norm_squared(), i))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(_, i)| i).collect()
    }

    #[test]
    fn knn_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1usize, 7, 64, 500] {
            let pts: Vec<Vec3> = (0..n)
                .map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()))
                .collect();
            let index = SpatialIndex::new(&pts);
            for _ in 0..100 {
                let q = Vec3::new(rng.gen(), rng.gen(), rng.gen());
                let k = rng.gen_range(1..20);
                assert_eq!(index.knn(&q, k), brute_knn(&pts, &q, k));
            }
        }
    }

    #[test]
    fn knn_ties_break_by_index() {
        // Integer grid: many equal distances.
        let mut pts = Vec::new();
        for x in 0..6 {
            for y in 0..6 {
                for z in 0..3 {
                    pts.push(Vec3::new(x as f64, y as f64, z as f64));
                }
            }
        }
        let index = SpatialIndex::new(&pts);
        for q in [
            Vec3::new(2.0, 2.0, 1.0),
            Vec3::new(0.5, 0.5, 0.5),
            Vec3::zeros(),
        ] {
            for k in [1, 4, 7, 19, 200] {
                assert_eq!(index.knn(&q, k), brute_knn(&pts, &q, k));
            }
        }
    }

    #[test]
    fn radius_query_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Vec3> = (0..300)
            .map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()))
            .collect();
        let index = SpatialIndex::new(&pts);
        for _ in 0..50 {
            let q = Vec3::new(rng.gen(), rng.gen(), rng.gen());
            let r = rng.gen_range(0.0..0.4);
            let got = index.within_radius(&q, r);
            let mut want: Vec<usize> = (0..pts.len())
                .filter(|&i| (pts[i] - q).norm() <= r)
                .collect();
            want.sort_by(|&a, &b| {
                (pts[a] - q)
                    .norm_squared()
                    .total_cmp(&(pts[b] - q).norm_squared())
                    .then(a.cmp(&b))
            });
            assert_eq!(got, want);
        }
    }

    #[test]
    fn empty_and_oversized_k() {
        let index = SpatialIndex::new(&[]);
        assert!(index.knn(&Vec3::zeros(), 3).is_empty());
        let index = SpatialIndex::new(&[Vec3::zeros(), Vec3::x()]);
        assert_eq!(index.knn(&Vec3::x(), 10), vec![1, 0]);
    }

    #[test]
    fn knn_graph_excludes_self() {
        let pts = vec![Vec3::zeros(), Vec3::zeros(), Vec3::x()];
        let g = SpatialIndex::new(&pts).knn_graph(2);
        assert_eq!(g[0], vec![1, 2]);
        assert_eq!(g[1], vec![0, 2]);
    }
}
