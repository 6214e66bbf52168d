//! Static k-d tree for exact k-nearest-neighbour search under Euclidean
//! distance. Ties in distance are broken by insertion index.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

#[derive(Clone, Debug, Default)]
pub struct KdTree {
    points: Vec<Vec<f64>>,
    nodes: Vec<Node>,
    root: Option<usize>,
}

#[derive(Clone, Debug)]
struct Node {
    point: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

/// Max-heap entry ordered by (squared distance, index).
#[derive(Clone, Copy, Debug, PartialEq)]
struct Hit {
    dist2: f64,
    index: usize,
}

impl Eq for Hit {}

impl Ord for Hit {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Hit {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl KdTree {
    /// Build over `points`; all points must share one dimension.
    pub fn build(points: Vec<Vec<f64>>) -> Self {
        let mut tree = KdTree {
            nodes: Vec::with_capacity(points.len()),
            points,
            root: None,
        };
        let mut order: Vec<usize> = (0..tree.points.len()).collect();
        tree.root = tree.build_rec(&mut order, 0);
        tree
    }

    fn build_rec(&mut self, idx: &mut [usize], depth: usize) -> Option<usize> {
        if idx.is_empty() {
            return None;
        }
        let dims = self.points[idx[0]].len().max(1);
        let axis = depth % dims;
        let points = &self.points;
        idx.sort_by(|&a, &b| {
            let pa = points[a].get(axis).copied().unwrap_or(0.0);
            let pb = points[b].get(axis).copied().unwrap_or(0.0);
            pa.total_cmp(&pb).then(a.cmp(&b))
        });
        let mid = idx.len() / 2;
        let point = idx[mid];
        let node = self.nodes.len();
        self.nodes.push(Node {
            point,
            axis,
            left: None,
            right: None,
        });
        let (lo, rest) = idx.split_at_mut(mid);
        let left = self.build_rec(lo, depth + 1);
        let right = self.build_rec(&mut rest[1..], depth + 1);
        self.nodes[node].left = left;
        self.nodes[node].right = right;
        Some(node)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    /// The `k` nearest points as `(index, distance)`, nearest first.
    pub fn nearest(&self, query: &[f64], k: usize) -> Vec<(usize, f64)> {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if k > 0 {
            if let Some(root) = self.root {
                self.search(root, query, k, &mut heap);
            }
        }
        let mut hits = heap.into_sorted_vec();
        hits.truncate(k);
        hits.into_iter().map(|h| (h.index, h.dist2.sqrt())).collect()
    }

    fn search(&self, node: usize, query: &[f64], k: usize, heap: &mut BinaryHeap<Hit>) {
        let n = &self.nodes[node];
        let hit = Hit {
            dist2: dist2(&self.points[n.point], query),
            index: n.point,
        };
        if heap.len() < k {
            heap.push(hit);
        } else if heap.peek().is_some_and(|worst| hit < *worst) {
            heap.pop();
            heap.push(hit);
        }
        let diff = query.get(n.axis).copied().unwrap_or(0.0)
            - self.points[n.point].get(n.axis).copied().unwrap_or(0.0);
        let (near, far) = if diff < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        if let Some(near) = near {
            self.search(near, query, k, heap);
        }
        if let Some(far) = far {
            // equal distance may still win on index, so only strictly farther planes prune
            let explore = heap.len() < k || heap.peek().is_some_and(|w| diff * diff <= w.dist2);
            if explore {
                self.search(far, query, k, heap);
            }
        }
    }
}

/// Reference k-nearest search by full scan.
pub fn linear_scan(points: &[Vec<f64>], query: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<Hit> = points
        .iter()
        .enumerate()
        .map(|(index, p)| Hit {
            dist2: dist2(p, query),
            index,
        })
        .collect();
    all.sort();
    all.truncate(k);
    all.into_iter().map(|h| (h.index, h.dist2.sqrt())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_points() {
        let tree = KdTree::build(vec![vec![0.0, 0.0], vec![1.0, 1.0]]);
        let hits = tree.nearest(&[0.1, 0.0], 1);
        assert_eq!(hits[0].0, 0);
        assert!((hits[0].1 - 0.1).abs() < 1e-12);
        assert_eq!(tree.nearest(&[0.1, 0.0], 5).len(), 2);
        assert!(KdTree::build(vec![]).nearest(&[0.0], 3).is_empty());
    }

    #[test]
    fn duplicate_points_tie_break_by_index() {
        let pts = vec![vec![0.5; 3]; 6];
        let tree = KdTree::build(pts.clone());
        let got: Vec<usize> = tree.nearest(&[0.5; 3], 4).into_iter().map(|h| h.0).collect();
        assert_eq!(got, vec![0, 1, 2, 3]);
    }

    proptest! {
        #[test]
        fn agrees_with_linear_scan(
            pts in prop::collection::vec(prop::collection::vec(0u8..5, 3), 0..40),
            q in prop::collection::vec(0u8..5, 3),
            k in 1usize..8,
        ) {
            // coarse grid values force many exact ties
            let pts: Vec<Vec<f64>> = pts.into_iter().map(|p| p.into_iter().map(|v| v as f64 / 4.0).collect()).collect();
            let q: Vec<f64> = q.into_iter().map(|v| v as f64 / 4.0).collect();
            let tree = KdTree::build(pts.clone());
            prop_assert_eq!(tree.nearest(&q, k), linear_scan(&pts, &q, k));
        }
    }
}
