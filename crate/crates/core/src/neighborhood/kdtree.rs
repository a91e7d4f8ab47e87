use crate::error::{EngineError, Result};
use crate::tensor::Matrix;

use super::{candidate_less, check_locations, squared_distance};

pub const DEFAULT_LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
enum Node {
    /// Points `order[start..end]`.
    Leaf { start: usize, end: usize },
    /// Left subtree holds coordinates `<= value` along `dim`, right `>= value`.
    Split {
        dim: usize,
        value: f64,
        start: usize,
        end: usize,
        left: usize,
        right: usize,
    },
}

/// Static kD-tree over a fixed point set. Splits along the dimension of
/// largest spread at the median.
#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    leaf_size: usize,
    /// Point indices in tree order; each leaf owns a contiguous range.
    order: Vec<usize>,
    /// Coordinates copied in tree order for contiguous leaf scans.
    coords: Vec<f64>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn build(locations: &Matrix) -> Result<Self> {
        Self::with_leaf_size(locations, DEFAULT_LEAF_SIZE)
    }

    pub fn with_leaf_size(locations: &Matrix, leaf_size: usize) -> Result<Self> {
        check_locations(locations)?;
        if leaf_size == 0 {
            return Err(EngineError::config("leaf size must be positive"));
        }
        let n = locations.rows();
        let dim = locations.cols();
        let mut tree = KdTree {
            dim,
            leaf_size,
            order: (0..n).collect(),
            coords: Vec::new(),
            nodes: Vec::with_capacity(2 * n / leaf_size + 1),
        };
        let mut order = std::mem::take(&mut tree.order);
        tree.build_node(locations, &mut order, 0);
        tree.coords = order
            .iter()
            .flat_map(|&i| locations.row(i).iter().copied())
            .collect();
        tree.order = order;
        Ok(tree)
    }

    fn build_node(&mut self, locations: &Matrix, slice: &mut [usize], start: usize) -> usize {
        let id = self.nodes.len();
        let end = start + slice.len();
        if slice.len() <= self.leaf_size {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut best_dim = 0;
        let mut best_spread = f64::NEG_INFINITY;
        for d in 0..self.dim {
            let (lo, hi) = slice.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                let v = locations.get(i, d);
                (lo.min(v), hi.max(v))
            });
            if hi - lo > best_spread {
                best_spread = hi - lo;
                best_dim = d;
            }
        }
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |&a, &b| {
            locations
                .get(a, best_dim)
                .total_cmp(&locations.get(b, best_dim))
                .then(a.cmp(&b))
        });
        let value = locations.get(slice[mid], best_dim);
        // placeholder, patched once the children exist
        self.nodes.push(Node::Leaf { start, end });
        let (lo, hi) = slice.split_at_mut(mid);
        let left = self.build_node(locations, lo, start);
        let right = self.build_node(locations, hi, start + mid);
        self.nodes[id] = Node::Split {
            dim: best_dim,
            value,
            start,
            end,
            left,
            right,
        };
        id
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    /// Point indices of every leaf, left to right.
    pub fn leaves(&self) -> impl Iterator<Item = &[usize]> {
        self.nodes.iter().filter_map(|n| match *n {
            Node::Leaf { start, end } => Some(&self.order[start..end]),
            Node::Split { .. } => None,
        })
    }

    /// Writes the `out.len()` nearest points to `query` other than `skip`
    /// into `out`, closest first. `heap` is scratch space.
    pub(crate) fn nearest_excluding(
        &self,
        query: &[f64],
        skip: usize,
        count: usize,
        heap: &mut Vec<(f64, usize)>,
        out: &mut [usize],
    ) {
        heap.clear();
        if count == 0 {
            return;
        }
        self.search(0, query, skip, count, heap);
        for (slot, c) in out.iter_mut().zip(heap.iter()) {
            *slot = c.1;
        }
    }

    fn search(
        &self,
        node: usize,
        query: &[f64],
        skip: usize,
        count: usize,
        best: &mut Vec<(f64, usize)>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for pos in start..end {
                    let idx = self.order[pos];
                    if idx == skip {
                        continue;
                    }
                    let p = &self.coords[pos * self.dim..(pos + 1) * self.dim];
                    let cand = (squared_distance(query, p), idx);
                    if best.len() < count {
                        insert_sorted(best, cand);
                    } else if candidate_less(cand, best[count - 1]) {
                        best.pop();
                        insert_sorted(best, cand);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
                ..
            } => {
                let diff = query[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, query, skip, count, best);
                // Rounding is monotone, so any point beyond the plane has a
                // squared distance of at least diff^2 as computed here.
                if best.len() < count || diff * diff <= best[count - 1].0 {
                    self.search(far, query, skip, count, best);
                }
            }
        }
    }

    /// Node count, leaves included.
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Index range `[start, end)` of tree order covered by each node.
    pub fn node_ranges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.nodes.iter().map(|n| match *n {
            Node::Leaf { start, end } | Node::Split { start, end, .. } => (start, end),
        })
    }
}

fn insert_sorted(best: &mut Vec<(f64, usize)>, cand: (f64, usize)) {
    let pos = best
        .iter()
        .position(|&b| candidate_less(cand, b))
        .unwrap_or(best.len());
    best.insert(pos, cand);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neighborhood::{knn_brute_force, knn_query};
    use crate::rng::Rng;

    fn random_locations(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = Rng::new(seed);
        let data = (0..n * d).map(|_| rng.uniform()).collect();
        Matrix::from_vec(n, d, data).unwrap()
    }

    #[test]
    fn single_point_single_leaf() {
        let locs = Matrix::from_rows(&[[1.0, 2.0, 3.0]]).unwrap();
        let tree = KdTree::build(&locs).unwrap();
        assert_eq!(tree.node_count(), 1);
        assert_eq!(tree.leaves().collect::<Vec<_>>(), vec![&[0usize][..]]);
    }

    #[test]
    fn every_index_in_exactly_one_leaf() {
        let locs = random_locations(1000, 3, 1);
        let tree = KdTree::with_leaf_size(&locs, 7).unwrap();
        let mut all: Vec<usize> = tree.leaves().flatten().copied().collect();
        assert!(tree.leaves().all(|l| !l.is_empty() && l.len() <= 7));
        all.sort();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
    }

    #[test]
    fn thousand_uniform_points_match_brute_force() {
        let locs = random_locations(1000, 3, 2);
        let tree = KdTree::build(&locs).unwrap();
        for k in [1, 2, 8, 17] {
            assert_eq!(
                knn_query(&tree, &locs, k).unwrap(),
                knn_brute_force(&locs, k).unwrap()
            );
        }
    }

    #[test]
    fn heavy_duplicates_match_brute_force() {
        let mut rng = Rng::new(5);
        let data = (0..600).map(|_| rng.below(3) as f64).collect();
        let locs = Matrix::from_vec(300, 2, data).unwrap();
        let tree = KdTree::with_leaf_size(&locs, 4).unwrap();
        assert_eq!(
            knn_query(&tree, &locs, 12).unwrap(),
            knn_brute_force(&locs, 12).unwrap()
        );
    }

    #[test]
    fn non_finite_and_empty_rejected() {
        use crate::ErrorKind;
        let bad = Matrix::from_rows(&[[0.0], [f64::INFINITY]]).unwrap();
        assert_eq!(KdTree::build(&bad).unwrap_err().kind, ErrorKind::NonFinite);
        let empty = Matrix::zeros(0, 3);
        assert_eq!(KdTree::build(&empty).unwrap_err().kind, ErrorKind::EmptyInput);
    }
}
