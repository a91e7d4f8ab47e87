use rayon::prelude::*;

use crate::error::{EngineError, Result};
use crate::neighborhood::NeighborIndex;
use crate::sampling::SelectionMap;
use crate::tensor::Matrix;

/// Winning neighbor (global row index) for every output point and channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolRecord {
    channels: usize,
    /// Rows of the pooled input.
    source_rows: usize,
    argmax: Vec<usize>,
}

impl PoolRecord {
    pub fn new(channels: usize, source_rows: usize, argmax: Vec<usize>) -> Self {
        Self {
            channels,
            source_rows,
            argmax,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn rows(&self) -> usize {
        self.argmax.len().checked_div(self.channels).unwrap_or(0)
    }

    #[inline]
    pub fn argmax(&self, i: usize, c: usize) -> usize {
        self.argmax[i * self.channels + c]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.argmax
    }
}

/// Per-channel maximum over each neighborhood; ties go to the lowest index.
pub fn flex_max_pool(features: &Matrix, neighbors: &NeighborIndex) -> Result<(Matrix, PoolRecord)> {
    let (n, ch) = features.shape();
    if neighbors.len() != n {
        return Err(EngineError::shape(format!(
            "neighbor table has {} rows for {n} points",
            neighbors.len()
        )));
    }
    if let Some(&bad) = neighbors.as_slice().iter().find(|&&j| j >= n) {
        return Err(EngineError::index(format!("neighbor {bad} out of range for {n} points")));
    }
    let mut pooled = Matrix::zeros(n, ch);
    let mut argmax = vec![0usize; n * ch];
    pooled
        .as_mut_slice()
        .par_chunks_mut(ch.max(1))
        .zip(argmax.par_chunks_mut(ch.max(1)))
        .enumerate()
        .for_each(|(i, (out, arg))| {
            let row = neighbors.row(i);
            out.copy_from_slice(features.row(row[0]));
            arg.iter_mut().for_each(|a| *a = row[0]);
            for &j in &row[1..] {
                for ((o, a), &v) in out.iter_mut().zip(arg.iter_mut()).zip(features.row(j)) {
                    let better = (v > *o) | ((v == *o) & (j < *a));
                    *o = if better { v } else { *o };
                    *a = if better { j } else { *a };
                }
            }
        });
    Ok((pooled, PoolRecord::new(ch, n, argmax)))
}

/// Routes each upstream entry to the recorded winner, summing collisions.
pub fn flex_max_pool_backward(upstream: &Matrix, record: &PoolRecord) -> Result<Matrix> {
    if upstream.shape() != (record.rows(), record.channels) {
        return Err(EngineError::shape(format!(
            "upstream gradient is {}x{}, pool produced {}x{}",
            upstream.rows(),
            upstream.cols(),
            record.rows(),
            record.channels
        )));
    }
    let ch = record.channels;
    let mut d = Matrix::zeros(record.source_rows, ch);
    for (flat, (&j, &g)) in record.argmax.iter().zip(upstream.as_slice()).enumerate() {
        if j >= record.source_rows {
            return Err(EngineError::index(format!(
                "pool record points at row {j} of {}",
                record.source_rows
            )));
        }
        let c = flat % ch;
        d.as_mut_slice()[j * ch + c] += g;
    }
    Ok(d)
}

/// Rows of `features` listed by `selection`, in selection order.
pub fn downsample_gather(features: &Matrix, selection: &SelectionMap) -> Result<Matrix> {
    features.gather_rows(selection.indices())
}

/// Adjoint of [`downsample_gather`] onto `n` rows.
pub fn downsample_gather_backward(upstream: &Matrix, selection: &SelectionMap, n: usize) -> Result<Matrix> {
    if upstream.rows() != selection.len() {
        return Err(EngineError::shape(format!(
            "upstream has {} rows for {} selected points",
            upstream.rows(),
            selection.len()
        )));
    }
    let mut d = Matrix::zeros(n, upstream.cols());
    for (row, &i) in selection.indices().iter().enumerate() {
        if i >= n {
            return Err(EngineError::index(format!("selected row {i} out of range for {n}")));
        }
        d.row_mut(i).copy_from_slice(upstream.row(row));
    }
    Ok(d)
}

/// Places coarse rows at their fine positions, zero-fills the rest and
/// max-pools over the fine neighborhoods.
pub fn flex_upsample(
    coarse: &Matrix,
    selection: &SelectionMap,
    fine_neighbors: &NeighborIndex,
    n: usize,
) -> Result<(Matrix, PoolRecord)> {
    if fine_neighbors.len() != n {
        return Err(EngineError::shape(format!(
            "fine neighbor table has {} rows, expected {n}",
            fine_neighbors.len()
        )));
    }
    let scattered = downsample_gather_backward(coarse, selection, n)?;
    flex_max_pool(&scattered, fine_neighbors)
}

/// Gradient of [`flex_upsample`] with respect to the coarse rows.
pub fn flex_upsample_backward(
    upstream: &Matrix,
    record: &PoolRecord,
    selection: &SelectionMap,
) -> Result<Matrix> {
    let d_fine = flex_max_pool_backward(upstream, record)?;
    downsample_gather(&d_fine, selection)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neighborhood::knn;
    use crate::ErrorKind;

    fn col(xs: &[f64]) -> Matrix {
        Matrix::from_vec(xs.len(), 1, xs.to_vec()).unwrap()
    }

    #[test]
    fn k_one_is_identity() {
        let f = Matrix::from_rows(&[[1.0, -2.0], [3.0, 0.5]]).unwrap();
        let nb = NeighborIndex::from_rows(1, vec![0, 1]).unwrap();
        let (p, rec) = flex_max_pool(&f, &nb).unwrap();
        assert_eq!(p, f);
        assert_eq!(rec.as_slice(), &[0, 0, 1, 1]);
        let g = Matrix::from_rows(&[[0.1, 0.2], [0.3, 0.4]]).unwrap();
        assert_eq!(flex_max_pool_backward(&g, &rec).unwrap(), g);
    }

    #[test]
    fn clique_pools_to_max() {
        let f = col(&[1.0, 5.0, 3.0]);
        let nb = NeighborIndex::from_rows(3, vec![0, 1, 2, 1, 0, 2, 2, 0, 1]).unwrap();
        let (p, rec) = flex_max_pool(&f, &nb).unwrap();
        assert_eq!(p.as_slice(), &[5.0, 5.0, 5.0]);
        assert_eq!(rec.as_slice(), &[1, 1, 1]);
        // one winner shared by all rows collects every upstream entry
        let d = flex_max_pool_backward(&col(&[1.0, 2.0, 4.0]), &rec).unwrap();
        assert_eq!(d.as_slice(), &[0.0, 7.0, 0.0]);
    }

    #[test]
    fn tie_goes_to_lower_index() {
        let f = col(&[2.0, 2.0]);
        let nb = NeighborIndex::from_rows(2, vec![0, 1, 1, 0]).unwrap();
        let (_, rec) = flex_max_pool(&f, &nb).unwrap();
        assert_eq!(rec.as_slice(), &[0, 0]);
    }

    #[test]
    fn corrupt_record_rejected() {
        let rec = PoolRecord::new(1, 2, vec![0, 5]);
        let err = flex_max_pool_backward(&col(&[1.0, 1.0]), &rec).unwrap_err();
        assert_eq!(err.kind, ErrorKind::IndexOutOfRange);
    }

    #[test]
    fn gather_order() {
        let f = col(&[10.0, 20.0, 30.0]);
        let sel = SelectionMap::identity(3);
        assert_eq!(downsample_gather(&f, &sel).unwrap(), f);
        // SelectionMap is canonical (sorted); explicit order goes through the matrix
        assert_eq!(f.gather_rows(&[2, 0]).unwrap().as_slice(), &[30.0, 10.0]);
    }

    #[test]
    fn upsample_identity() {
        let f = Matrix::from_rows(&[[1.0, -1.0], [2.0, 0.0]]).unwrap();
        let nb = NeighborIndex::from_rows(1, vec![0, 1]).unwrap();
        let (up, _) = flex_upsample(&f, &SelectionMap::identity(2), &nb, 2).unwrap();
        assert_eq!(up, f);
    }

    #[test]
    fn upsample_line_pipeline() {
        let locs = col(&[0.0, 1.0, 3.0]);
        let nb = knn(&locs, 2).unwrap();
        let sel = SelectionMap::new(vec![0], 3).unwrap();
        let (up, rec) = flex_upsample(&col(&[7.0]), &sel, &nb, 3).unwrap();
        assert_eq!(up.as_slice(), &[7.0, 7.0, 0.0]);
        let d = flex_upsample_backward(&col(&[1.0, 1.0, 1.0]), &rec, &sel).unwrap();
        assert_eq!(d.as_slice(), &[2.0]);
    }

    #[test]
    fn upsample_zero_fill_dominates_negatives() {
        let locs = col(&[0.0, 1.0]);
        let nb = knn(&locs, 2).unwrap();
        let sel = SelectionMap::new(vec![0], 2).unwrap();
        let (up, _) = flex_upsample(&col(&[-3.0]), &sel, &nb, 2).unwrap();
        assert_eq!(up.as_slice(), &[0.0, 0.0]);
    }
}
