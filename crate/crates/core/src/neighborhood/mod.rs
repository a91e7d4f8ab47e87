//! Exact k-nearest-neighbor tables.
//!
//! Every row of a [`NeighborIndex`] starts with the point itself, followed by
//! the `k - 1` closest other points ordered by squared Euclidean distance with
//! ties broken by ascending index. The kD-tree query and the brute-force scan
//! share the same distance routine so their outputs agree bit for bit.

mod io;
mod kdtree;

pub use io::{read_flexknn, write_flexknn};
pub use kdtree::{KdTree, DEFAULT_LEAF_SIZE};

use rayon::prelude::*;

use crate::error::{EngineError, Result};
use crate::tensor::Matrix;

/// `n x k` table of neighbor indices, self first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborIndex {
    k: usize,
    indices: Vec<usize>,
}

impl NeighborIndex {
    /// Wraps a row-major table after checking range, self-inclusion and
    /// distinctness.
    pub fn from_rows(k: usize, indices: Vec<usize>) -> Result<Self> {
        if k == 0 {
            return Err(EngineError::config("neighborhood size must be positive"));
        }
        if !indices.len().is_multiple_of(k) {
            return Err(EngineError::shape(format!(
                "{} indices do not form rows of length {k}",
                indices.len()
            )));
        }
        let n = indices.len() / k;
        for (i, row) in indices.chunks(k).enumerate() {
            if row[0] != i {
                return Err(EngineError::index(format!(
                    "row {i} must start with itself, found {}",
                    row[0]
                )));
            }
            for (a, &j) in row.iter().enumerate() {
                if j >= n {
                    return Err(EngineError::index(format!(
                        "neighbor {j} in row {i} out of range for {n} points"
                    )));
                }
                if row[..a].contains(&j) {
                    return Err(EngineError::index(format!(
                        "neighbor {j} repeated in row {i}"
                    )));
                }
            }
        }
        Ok(Self { k, indices })
    }

    /// Skips validation; callers guarantee the invariants.
    pub(crate) fn from_rows_unchecked(k: usize, indices: Vec<usize>) -> Self {
        Self { k, indices }
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.indices.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.indices
    }

    pub fn rows(&self) -> impl Iterator<Item = &[usize]> {
        self.indices.chunks(self.k)
    }

    /// Transposed adjacency in CSR form: for every point `j`, the flat slots
    /// `i * k + s` whose entry equals `j`, in ascending slot order.
    pub fn transpose(&self) -> Transposed {
        let n = self.len();
        let mut offsets = vec![0usize; n + 1];
        for &j in &self.indices {
            offsets[j + 1] += 1;
        }
        for j in 0..n {
            offsets[j + 1] += offsets[j];
        }
        let mut cursor = offsets.clone();
        let mut slots = vec![0usize; self.indices.len()];
        for (slot, &j) in self.indices.iter().enumerate() {
            slots[cursor[j]] = slot;
            cursor[j] += 1;
        }
        Transposed { offsets, slots }
    }
}

/// Reverse lookup produced by [`NeighborIndex::transpose`].
#[derive(Debug, Clone)]
pub struct Transposed {
    offsets: Vec<usize>,
    slots: Vec<usize>,
}

impl Transposed {
    /// Flat slots `i * k + s` that reference point `j`.
    #[inline]
    pub fn slots_of(&self, j: usize) -> &[usize] {
        &self.slots[self.offsets[j]..self.offsets[j + 1]]
    }
}

#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let t = x - y;
        acc += t * t;
    }
    acc
}

/// Total order on candidates: distance first, then index.
#[inline]
pub(crate) fn candidate_less(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

pub(crate) fn check_locations(locations: &Matrix) -> Result<()> {
    if locations.rows() == 0 {
        return Err(EngineError::empty("no locations given"));
    }
    if locations.cols() == 0 {
        return Err(EngineError::shape("locations need at least one dimension"));
    }
    if !locations.is_finite() {
        return Err(EngineError::non_finite("locations contain NaN or Inf"));
    }
    Ok(())
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(EngineError::config(format!(
            "neighborhood size {k} must lie in [1, {n}]"
        )));
    }
    Ok(())
}

/// O(n^2) reference scan with the same contract as [`knn_query`].
pub fn knn_brute_force(locations: &Matrix, k: usize) -> Result<NeighborIndex> {
    check_locations(locations)?;
    let n = locations.rows();
    check_k(n, k)?;
    let mut indices = vec![0usize; n * k];
    indices
        .par_chunks_mut(k)
        .enumerate()
        .for_each(|(i, row)| {
            let q = locations.row(i);
            let mut cands: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (squared_distance(q, locations.row(j)), j))
                .collect();
            cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            row[0] = i;
            for (slot, c) in row[1..].iter_mut().zip(&cands) {
                *slot = c.1;
            }
        });
    Ok(NeighborIndex::from_rows_unchecked(k, indices))
}

/// Exact kNN of every point of `locations` against `tree`, which must have
/// been built from the same locations.
pub fn knn_query(tree: &KdTree, locations: &Matrix, k: usize) -> Result<NeighborIndex> {
    check_locations(locations)?;
    let n = locations.rows();
    if tree.len() != n || tree.dim() != locations.cols() {
        return Err(EngineError::shape(format!(
            "tree holds {}x{} points, query has {}x{}",
            tree.len(),
            tree.dim(),
            n,
            locations.cols()
        )));
    }
    check_k(n, k)?;
    let mut indices = vec![0usize; n * k];
    indices
        .par_chunks_mut(k)
        .enumerate()
        .for_each_init(Vec::new, |heap, (i, row)| {
            row[0] = i;
            tree.nearest_excluding(locations.row(i), i, k - 1, heap, &mut row[1..]);
        });
    Ok(NeighborIndex::from_rows_unchecked(k, indices))
}

/// Builds a tree with the default leaf size and queries it.
pub fn knn(locations: &Matrix, k: usize) -> Result<NeighborIndex> {
    let tree = KdTree::build(locations)?;
    knn_query(&tree, locations, k)
}
