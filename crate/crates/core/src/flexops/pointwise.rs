use rayon::prelude::*;

use super::ordered_reduce;
use crate::error::{EngineError, Result};
use crate::tensor::Matrix;

/// Per-point affine map `out_i = W f_i + b` with `W` of shape `C' x C`.
pub fn pointwise_conv(features: &Matrix, weights: &Matrix, bias: &[f64]) -> Result<Matrix> {
    check(features, weights, bias)?;
    let (c_out, c_in) = weights.shape();
    let mut out = Matrix::zeros(features.rows(), c_out);
    out.as_mut_slice()
        .par_chunks_mut(c_out)
        .enumerate()
        .for_each(|(i, row)| {
            let f = features.row(i);
            for (o, slot) in row.iter_mut().enumerate() {
                let w = &weights.as_slice()[o * c_in..(o + 1) * c_in];
                *slot = bias[o] + super::conv::dot(w, f);
            }
        });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseGrads {
    pub d_features: Matrix,
    pub d_weights: Matrix,
    pub d_bias: Vec<f64>,
}

pub fn pointwise_conv_backward(
    upstream: &Matrix,
    features: &Matrix,
    weights: &Matrix,
) -> Result<PointwiseGrads> {
    let (c_out, c_in) = weights.shape();
    if features.cols() != c_in || upstream.shape() != (features.rows(), c_out) {
        return Err(EngineError::shape(format!(
            "pointwise backward: upstream {:?}, features {:?}, weights {:?}",
            upstream.shape(),
            features.shape(),
            weights.shape()
        )));
    }
    let n = features.rows();
    let mut d_features = Matrix::zeros(n, c_in);
    d_features
        .as_mut_slice()
        .par_chunks_mut(c_in)
        .enumerate()
        .for_each(|(i, row)| {
            for (o, &g) in upstream.row(i).iter().enumerate() {
                let w = &weights.as_slice()[o * c_in..(o + 1) * c_in];
                for (a, &wv) in row.iter_mut().zip(w) {
                    *a += g * wv;
                }
            }
        });
    // weights then bias in one ordered reduction
    let flat = ordered_reduce(n, c_out * c_in + c_out, |range, acc| {
        for i in range {
            let f = features.row(i);
            for (o, &g) in upstream.row(i).iter().enumerate() {
                for (a, &fv) in acc[o * c_in..(o + 1) * c_in].iter_mut().zip(f) {
                    *a += g * fv;
                }
                acc[c_out * c_in + o] += g;
            }
        }
    });
    let d_weights = Matrix::from_vec(c_out, c_in, flat[..c_out * c_in].to_vec())?;
    Ok(PointwiseGrads {
        d_features,
        d_weights,
        d_bias: flat[c_out * c_in..].to_vec(),
    })
}

fn check(features: &Matrix, weights: &Matrix, bias: &[f64]) -> Result<()> {
    if features.cols() != weights.cols() || bias.len() != weights.rows() {
        return Err(EngineError::shape(format!(
            "pointwise conv: features {:?}, weights {:?}, bias {}",
            features.shape(),
            weights.shape(),
            bias.len()
        )));
    }
    Ok(())
}
