//! Flex-convolution operator family with analytic gradients.
//!
//! Offsets are always taken as `center - neighbor`. All parallel reductions
//! run over fixed point chunks that are merged in chunk order, so results do
//! not depend on the rayon thread count.

mod conv;
mod pointwise;
mod pool;

pub use conv::{
    flex_conv_backward, flex_conv_backward_split, flex_conv_forward, flex_conv_forward_naive,
    flex_conv_forward_split, param_count, FlexConvParams, GradBundle,
};
pub use pointwise::{pointwise_conv, pointwise_conv_backward, PointwiseGrads};
pub use pool::{
    downsample_gather, downsample_gather_backward, flex_max_pool, flex_max_pool_backward,
    flex_upsample, flex_upsample_backward, PoolRecord,
};

use std::ops::Range;

use rayon::prelude::*;

/// Points per reduction chunk.
const REDUCE_CHUNK: usize = 256;

/// Sums per-chunk partial vectors of length `len` over `0..n`, in chunk order.
pub(crate) fn ordered_reduce<F>(n: usize, len: usize, body: F) -> Vec<f64>
where
    F: Fn(Range<usize>, &mut [f64]) + Sync,
{
    let chunks = n.div_ceil(REDUCE_CHUNK);
    let partials: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; len];
            body(c * REDUCE_CHUNK..((c + 1) * REDUCE_CHUNK).min(n), &mut acc);
            acc
        })
        .collect();
    let mut total = vec![0.0; len];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}
