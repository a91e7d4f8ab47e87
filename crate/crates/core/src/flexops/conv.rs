use rayon::prelude::*;

use super::ordered_reduce;
use crate::error::{EngineError, Result};
use crate::neighborhood::NeighborIndex;
use crate::tensor::Matrix;

/// Linear kernel weights: for output channel `o` and input channel `c`, the
/// weight of neighbor `j` seen from center `i` is
/// `<theta[o][c], l_i - l_j> + theta_b[o][c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlexConvParams {
    c_in: usize,
    c_out: usize,
    dim: usize,
    /// `c_out x c_in x dim`, row-major.
    pub theta: Vec<f64>,
    /// `c_out x c_in`, row-major.
    pub theta_b: Vec<f64>,
}

impl FlexConvParams {
    pub fn zeros(c_in: usize, c_out: usize, dim: usize) -> Self {
        Self {
            c_in,
            c_out,
            dim,
            theta: vec![0.0; c_out * c_in * dim],
            theta_b: vec![0.0; c_out * c_in],
        }
    }

    pub fn new(
        c_in: usize,
        c_out: usize,
        dim: usize,
        theta: Vec<f64>,
        theta_b: Vec<f64>,
    ) -> Result<Self> {
        if c_in == 0 || c_out == 0 || dim == 0 {
            return Err(EngineError::shape("flex-conv channel and spatial sizes must be positive"));
        }
        if theta.len() != c_out * c_in * dim || theta_b.len() != c_out * c_in {
            return Err(EngineError::shape(format!(
                "expected {} theta and {} theta_b values, got {} and {}",
                c_out * c_in * dim,
                c_out * c_in,
                theta.len(),
                theta_b.len()
            )));
        }
        if theta.iter().chain(&theta_b).any(|v| !v.is_finite()) {
            return Err(EngineError::non_finite("flex-conv parameters"));
        }
        Ok(Self {
            c_in,
            c_out,
            dim,
            theta,
            theta_b,
        })
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn theta_at(&self, o: usize, c: usize) -> &[f64] {
        let base = (o * self.c_in + c) * self.dim;
        &self.theta[base..base + self.dim]
    }

    /// Row `o` holds, per input channel, `dim` theta entries then theta_b.
    fn packed(&self) -> Vec<f64> {
        let stride = self.dim + 1;
        let mut w = vec![0.0; self.c_out * self.c_in * stride];
        for o in 0..self.c_out {
            for c in 0..self.c_in {
                let dst = &mut w[(o * self.c_in + c) * stride..(o * self.c_in + c + 1) * stride];
                dst[..self.dim].copy_from_slice(self.theta_at(o, c));
                dst[self.dim] = self.theta_b[o * self.c_in + c];
            }
        }
        w
    }
}

/// Number of trainable values of a flex-conv layer.
pub fn param_count(c_in: usize, c_out: usize, dim: usize) -> usize {
    c_out * c_in * (dim + 1)
}

/// Gradients of a flex-conv layer. `d_locations` is the total location
/// gradient; the two role terms it sums are kept separately.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle {
    pub d_features: Matrix,
    pub d_theta: Vec<f64>,
    pub d_theta_b: Vec<f64>,
    pub d_locations: Matrix,
    /// Through `l_i` as the center of its own neighborhood.
    pub d_locations_center: Matrix,
    /// Through `l_j` as a member of other neighborhoods.
    pub d_locations_neighbor: Matrix,
}

fn check_shapes(
    features: &Matrix,
    centers: &Matrix,
    sources: &Matrix,
    neighbors: &NeighborIndex,
    params: &FlexConvParams,
) -> Result<()> {
    let n = features.rows();
    if features.cols() != params.c_in {
        return Err(EngineError::shape(format!(
            "features have {} channels, layer expects {}",
            features.cols(),
            params.c_in
        )));
    }
    for (name, m) in [("center", centers), ("neighbor", sources)] {
        if m.rows() != n || m.cols() != params.dim {
            return Err(EngineError::shape(format!(
                "{name} locations are {}x{}, expected {n}x{}",
                m.rows(),
                m.cols(),
                params.dim
            )));
        }
    }
    if neighbors.len() != n {
        return Err(EngineError::shape(format!(
            "neighbor table has {} rows for {n} points",
            neighbors.len()
        )));
    }
    if let Some(&bad) = neighbors.as_slice().iter().find(|&&j| j >= n) {
        return Err(EngineError::index(format!("neighbor {bad} out of range for {n} points")));
    }
    Ok(())
}

/// Accumulates, for center `i`, `z[c*(d+1)+t] = sum_j (l_i - l_j)_t f(c, j)`
/// and `z[c*(d+1)+d] = sum_j f(c, j)`. The layer output is then `W z`.
#[inline]
fn moments(
    i: usize,
    features: &Matrix,
    centers: &Matrix,
    sources: &Matrix,
    row: &[usize],
    delta: &mut [f64],
    z: &mut [f64],
) {
    match centers.cols() {
        1 => moments_fixed::<2>(i, features, centers, sources, row, z),
        2 => moments_fixed::<3>(i, features, centers, sources, row, z),
        3 => moments_fixed::<4>(i, features, centers, sources, row, z),
        _ => moments_any(i, features, centers, sources, row, delta, z),
    }
}

/// [`moments`] for `S = d + 1`; the offset is extended by a constant 1 so
/// every channel updates `S` lanes uniformly.
#[inline]
fn moments_fixed<const S: usize>(
    i: usize,
    features: &Matrix,
    centers: &Matrix,
    sources: &Matrix,
    row: &[usize],
    z: &mut [f64],
) {
    z.iter_mut().for_each(|v| *v = 0.0);
    let li = centers.row(i);
    for &j in row {
        let lj = sources.row(j);
        let mut a = [1.0; S];
        for t in 0..S - 1 {
            a[t] = li[t] - lj[t];
        }
        for (zc, &f) in z.chunks_exact_mut(S).zip(features.row(j)) {
            for t in 0..S {
                zc[t] += a[t] * f;
            }
        }
    }
}

fn moments_any(
    i: usize,
    features: &Matrix,
    centers: &Matrix,
    sources: &Matrix,
    row: &[usize],
    delta: &mut [f64],
    z: &mut [f64],
) {
    let dim = centers.cols();
    let stride = dim + 1;
    z.iter_mut().for_each(|v| *v = 0.0);
    let li = centers.row(i);
    for &j in row {
        let lj = sources.row(j);
        for t in 0..dim {
            delta[t] = li[t] - lj[t];
        }
        let fj = features.row(j);
        for (c, &f) in fj.iter().enumerate() {
            let zc = &mut z[c * stride..(c + 1) * stride];
            for t in 0..dim {
                zc[t] += delta[t] * f;
            }
            zc[dim] += f;
        }
    }
}

/// `df[c] = sum over slots (i, s) referencing `j` of `<h_i[c], (l_i - l_j, 1)>`.
fn gather_features<const S: usize>(
    j: usize,
    df: &mut [f64],
    h: &Matrix,
    centers: &Matrix,
    sources: &Matrix,
    slots: &[usize],
    k: usize,
) {
    let lj = sources.row(j);
    for &slot in slots {
        let i = slot / k;
        let li = centers.row(i);
        let mut delta = [0.0; S];
        for t in 0..S - 1 {
            delta[t] = li[t] - lj[t];
        }
        for (d, hc) in df.iter_mut().zip(h.row(i).chunks_exact(S)) {
            let mut acc = 0.0;
            for t in 0..S - 1 {
                acc += hc[t] * delta[t];
            }
            *d += acc + hc[S - 1];
        }
    }
}

fn gather_features_any(
    j: usize,
    df: &mut [f64],
    h: &Matrix,
    centers: &Matrix,
    sources: &Matrix,
    slots: &[usize],
    k: usize,
) {
    let lj = sources.row(j);
    let dim = lj.len();
    for &slot in slots {
        let i = slot / k;
        let li = centers.row(i);
        for (d, hc) in df.iter_mut().zip(h.row(i).chunks_exact(dim + 1)) {
            let mut acc = 0.0;
            for t in 0..dim {
                acc += hc[t] * (li[t] - lj[t]);
            }
            *d += acc + hc[dim];
        }
    }
}

/// Dot product with four interleaved partial sums.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for t in 0..4 {
            acc[t] += x[t] * y[t];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out(o, i) = sum_c sum_{j in N(i)} (<theta[o][c], l_i - l_j> + theta_b[o][c]) f(c, j)`
pub fn flex_conv_forward(
    features: &Matrix,
    locations: &Matrix,
    neighbors: &NeighborIndex,
    params: &FlexConvParams,
) -> Result<Matrix> {
    flex_conv_forward_split(features, locations, locations, neighbors, params)
}

/// Forward pass with separate center and neighbor location tables; the
/// offset for pair `(i, j)` is `centers[i] - sources[j]`.
pub fn flex_conv_forward_split(
    features: &Matrix,
    centers: &Matrix,
    sources: &Matrix,
    neighbors: &NeighborIndex,
    params: &FlexConvParams,
) -> Result<Matrix> {
    check_shapes(features, centers, sources, neighbors, params)?;
    let n = features.rows();
    let width = params.c_in * (params.dim + 1);
    let w = params.packed();
    let mut out = Matrix::zeros(n, params.c_out);
    out.as_mut_slice()
        .par_chunks_mut(params.c_out)
        .enumerate()
        .for_each_init(
            || (vec![0.0; params.dim], vec![0.0; width]),
            |(delta, z), (i, out_row)| {
                moments(i, features, centers, sources, neighbors.row(i), delta, z);
                for (o, slot) in out_row.iter_mut().enumerate() {
                    *slot = dot(&w[o * width..(o + 1) * width], z);
                }
            },
        );
    Ok(out)
}

/// Direct evaluation of the defining sum, one kernel weight per
/// `(i, j, o, c)`, single-threaded. Reference and benchmark baseline.
pub fn flex_conv_forward_naive(
    features: &Matrix,
    locations: &Matrix,
    neighbors: &NeighborIndex,
    params: &FlexConvParams,
) -> Result<Matrix> {
    check_shapes(features, locations, locations, neighbors, params)?;
    let n = features.rows();
    let mut out = Matrix::zeros(n, params.c_out);
    for i in 0..n {
        let li = locations.row(i);
        for o in 0..params.c_out {
            let mut acc = 0.0;
            for &j in neighbors.row(i) {
                let lj = locations.row(j);
                for c in 0..params.c_in {
                    let theta = params.theta_at(o, c);
                    let mut w = params.theta_b[o * params.c_in + c];
                    for t in 0..params.dim {
                        w += theta[t] * (li[t] - lj[t]);
                    }
                    acc += w * features.get(j, c);
                }
            }
            out.set(i, o, acc);
        }
    }
    Ok(out)
}

pub fn flex_conv_backward(
    upstream: &Matrix,
    features: &Matrix,
    locations: &Matrix,
    neighbors: &NeighborIndex,
    params: &FlexConvParams,
) -> Result<GradBundle> {
    flex_conv_backward_split(upstream, features, locations, locations, neighbors, params, true)
}

/// Backward pass of [`flex_conv_forward_split`]. With `want_locations` off
/// the three location matrices come back as zeros.
pub fn flex_conv_backward_split(
    upstream: &Matrix,
    features: &Matrix,
    centers: &Matrix,
    sources: &Matrix,
    neighbors: &NeighborIndex,
    params: &FlexConvParams,
    want_locations: bool,
) -> Result<GradBundle> {
    check_shapes(features, centers, sources, neighbors, params)?;
    let n = features.rows();
    if upstream.shape() != (n, params.c_out) {
        return Err(EngineError::shape(format!(
            "upstream gradient is {}x{}, expected {n}x{}",
            upstream.rows(),
            upstream.cols(),
            params.c_out
        )));
    }
    let dim = params.dim;
    let stride = dim + 1;
    let c_in = params.c_in;
    let c_out = params.c_out;
    let width = c_in * stride;
    let w = params.packed();

    // dW = sum_i g_i z_i^T
    let d_packed = ordered_reduce(n, c_out * width, |range, acc| {
        let mut delta = vec![0.0; dim];
        let mut z = vec![0.0; width];
        for i in range {
            moments(i, features, centers, sources, neighbors.row(i), &mut delta, &mut z);
            for (o, &g) in upstream.row(i).iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                for (a, &zv) in acc[o * width..(o + 1) * width].iter_mut().zip(&z) {
                    *a += g * zv;
                }
            }
        }
    });

    // h_i = W^T g_i, the gradient with respect to z_i
    let mut h = Matrix::zeros(n, width);
    h.as_mut_slice()
        .par_chunks_mut(width)
        .enumerate()
        .for_each(|(i, hi)| {
            for (o, &g) in upstream.row(i).iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                for (a, &wv) in hi.iter_mut().zip(&w[o * width..(o + 1) * width]) {
                    *a += g * wv;
                }
            }
        });

    let mut d_center = Matrix::zeros(n, dim);
    if want_locations {
        d_center
            .as_mut_slice()
            .par_chunks_mut(dim)
            .enumerate()
            .for_each(|(i, out)| {
                let hi = h.row(i);
                for &j in neighbors.row(i) {
                    for (c, &f) in features.row(j).iter().enumerate() {
                        for t in 0..dim {
                            out[t] += hi[c * stride + t] * f;
                        }
                    }
                }
            });
    }

    // Scatter to neighbors as a gather over the transposed table, visiting
    // referencing slots in ascending order.
    let k = neighbors.k();
    let transposed = neighbors.transpose();
    let mut d_features = Matrix::zeros(n, c_in);
    let mut d_neighbor = Matrix::zeros(n, dim);
    if want_locations {
        d_features
            .as_mut_slice()
            .par_chunks_mut(c_in)
            .zip(d_neighbor.as_mut_slice().par_chunks_mut(dim))
            .enumerate()
            .for_each_init(
                || vec![0.0; dim],
                |delta, (j, (df, dl))| {
                    let lj = sources.row(j);
                    let fj = features.row(j);
                    for &slot in transposed.slots_of(j) {
                        let i = slot / k;
                        let li = centers.row(i);
                        for t in 0..dim {
                            delta[t] = li[t] - lj[t];
                        }
                        let hi = h.row(i);
                        for c in 0..c_in {
                            let hc = &hi[c * stride..(c + 1) * stride];
                            let mut acc = 0.0;
                            for t in 0..dim {
                                acc += hc[t] * delta[t];
                            }
                            df[c] += acc + hc[dim];
                            for t in 0..dim {
                                dl[t] -= hc[t] * fj[c];
                            }
                        }
                    }
                },
            );
    } else {
        let gather = match dim {
            1 => gather_features::<2>,
            2 => gather_features::<3>,
            3 => gather_features::<4>,
            _ => gather_features_any,
        };
        d_features
            .as_mut_slice()
            .par_chunks_mut(c_in)
            .enumerate()
            .for_each(|(j, df)| gather(j, df, &h, centers, sources, transposed.slots_of(j), k));
    }

    let mut d_theta = vec![0.0; c_out * c_in * dim];
    let mut d_theta_b = vec![0.0; c_out * c_in];
    for o in 0..c_out {
        for c in 0..c_in {
            let src = &d_packed[(o * c_in + c) * stride..(o * c_in + c + 1) * stride];
            d_theta[(o * c_in + c) * dim..(o * c_in + c + 1) * dim].copy_from_slice(&src[..dim]);
            d_theta_b[o * c_in + c] = src[dim];
        }
    }
    let mut d_locations = d_center.clone();
    d_locations.add_assign(&d_neighbor);
    Ok(GradBundle {
        d_features,
        d_theta,
        d_theta_b,
        d_locations,
        d_locations_center: d_center,
        d_locations_neighbor: d_neighbor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ErrorKind;

    #[test]
    fn identity_configuration() {
        let f = Matrix::from_rows(&[[5.0]]).unwrap();
        let l = Matrix::from_rows(&[[0.3, -1.0]]).unwrap();
        let nb = NeighborIndex::from_rows(1, vec![0]).unwrap();
        let p = FlexConvParams::new(1, 1, 2, vec![0.0, 0.0], vec![1.0]).unwrap();
        assert_eq!(flex_conv_forward(&f, &l, &nb, &p).unwrap().as_slice(), &[5.0]);
    }

    fn two_points() -> (Matrix, Matrix, NeighborIndex, FlexConvParams) {
        let f = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        let l = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0]]).unwrap();
        let nb = NeighborIndex::from_rows(2, vec![0, 1, 1, 0]).unwrap();
        let p = FlexConvParams::new(1, 1, 2, vec![1.0, 0.0], vec![0.0]).unwrap();
        (f, l, nb, p)
    }

    #[test]
    fn two_point_forward() {
        let (f, l, nb, p) = two_points();
        let out = flex_conv_forward(&f, &l, &nb, &p).unwrap();
        assert_eq!(out.get(0, 0), -2.0);
        // point 1: <(1,0),(1,0)> * 1 = 1
        assert_eq!(out.get(1, 0), 1.0);
        assert_eq!(out, flex_conv_forward_naive(&f, &l, &nb, &p).unwrap());
    }

    #[test]
    fn two_point_backward() {
        let (f, l, nb, p) = two_points();
        let g = Matrix::from_rows(&[[1.0], [0.0]]).unwrap();
        let grads = flex_conv_backward(&g, &f, &l, &nb, &p).unwrap();
        // weights seen from point 0: self 0, neighbor <(1,0),(-1,0)> = -1
        assert_eq!(grads.d_features.as_slice(), &[0.0, -1.0]);
        // sum_j f_j (l_0 - l_j) = 2 * (-1, 0)
        assert_eq!(grads.d_theta, vec![-2.0, 0.0]);
        assert_eq!(grads.d_theta_b, vec![3.0]);
    }

    #[test]
    fn theta_b_gradient_is_neighbor_feature_sum() {
        let f = Matrix::from_rows(&[[1.0, 2.0], [3.0, -1.0], [0.5, 4.0]]).unwrap();
        let l = Matrix::from_rows(&[[0.0], [1.0], [3.0]]).unwrap();
        let nb = NeighborIndex::from_rows(2, vec![0, 1, 1, 0, 2, 1]).unwrap();
        let p = FlexConvParams::new(2, 3, 1, vec![0.0; 6], vec![0.7, -0.2, 1.0, 2.0, 0.1, 0.0])
            .unwrap();
        let g = Matrix::filled(3, 3, 1.0);
        let grads = flex_conv_backward(&g, &f, &l, &nb, &p).unwrap();
        // sum over rows of sum_j f(c, j): channel 0: (1+3)+(3+1)+(0.5+3) = 11.5
        // channel 1: (2-1)+(-1+2)+(4-1) = 5
        for o in 0..3 {
            assert_eq!(grads.d_theta_b[o * 2], 11.5);
            assert_eq!(grads.d_theta_b[o * 2 + 1], 5.0);
        }
    }

    #[test]
    fn shape_errors() {
        let (f, l, nb, p) = two_points();
        let bad = Matrix::zeros(2, 3);
        assert_eq!(
            flex_conv_forward(&f, &bad, &nb, &p).unwrap_err().kind,
            ErrorKind::ShapeMismatch
        );
        let wide = Matrix::zeros(2, 2);
        assert_eq!(
            flex_conv_forward(&wide, &l, &nb, &p).unwrap_err().kind,
            ErrorKind::ShapeMismatch
        );
        let g = Matrix::zeros(3, 1);
        assert_eq!(
            flex_conv_backward(&g, &f, &l, &nb, &p).unwrap_err().kind,
            ErrorKind::ShapeMismatch
        );
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(param_count(64, 64, 3), 16384);
        assert_eq!(param_count(1, 1, 2), 3);
        // a 3x3 grid kernel holds 9 weights per channel pair, flex holds 3 in 2-D
        assert_eq!(9 * 5 * 7, 3 * param_count(5, 7, 2));
    }
}
