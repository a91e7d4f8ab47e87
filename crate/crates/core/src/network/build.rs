use super::graph::{GraphBuilder, LayerGraph, NodeId};
use crate::error::{EngineError, Result};

fn check_common(d: usize, n_f: usize, stages: usize, base_channels: usize, k: usize) -> Result<()> {
    if d == 0 || n_f == 0 {
        return Err(EngineError::config("spatial dimension and input features must be positive"));
    }
    if stages == 0 {
        return Err(EngineError::config("at least one stage is required"));
    }
    if base_channels == 0 || k == 0 {
        return Err(EngineError::config("base channels and k must be positive"));
    }
    if stages > 16 {
        return Err(EngineError::config(format!("{stages} stages is beyond any sensible depth")));
    }
    Ok(())
}

/// Locations attached, projected to `width` with ReLU, then two ResNet blocks.
fn stage(b: &mut GraphBuilder, x: NodeId, width: usize, k: usize) -> Result<NodeId> {
    let h = b.attach_location(x);
    let h = b.pointwise(h, width)?;
    let h = b.relu(h);
    let h = b.resnet_block(h, k)?;
    b.resnet_block(h, k)
}

/// Encoder stages `0..stages` ending in a pool-and-subsample each; returns
/// the pooled output and the per-stage outputs before pooling.
fn encoder(b: &mut GraphBuilder, stages: usize, base: usize, k: usize) -> Result<(NodeId, Vec<NodeId>)> {
    let mut x = b.input();
    let mut skips = Vec::with_capacity(stages);
    for s in 0..stages {
        let h = stage(b, x, base << s, k)?;
        skips.push(h);
        x = b.pool_down(h);
    }
    Ok((x, skips))
}

/// Encoder/decoder segmentation network. Stage `s` runs at hierarchy level
/// `s` with `base_channels * 2^s` channels; a bottleneck stage runs at level
/// `stages`. The decoder upsamples, concatenates the matching encoder output,
/// and runs a mirrored stage. A pointwise layer maps to `n_c` logits per
/// point.
///
/// `factor` is the subsampling factor the hierarchy must be built with; it is
/// recorded in the description only.
pub fn build_segnet(
    d: usize,
    n_f: usize,
    n_c: usize,
    stages: usize,
    base_channels: usize,
    k: usize,
    factor: usize,
) -> Result<LayerGraph> {
    check_common(d, n_f, stages, base_channels, k)?;
    if n_c < 2 {
        return Err(EngineError::config("segmentation needs at least two classes"));
    }
    if factor < 2 {
        return Err(EngineError::config("subsampling factor must be >= 2"));
    }
    let mut b = GraphBuilder::new(d, n_f)?;
    let (pooled, skips) = encoder(&mut b, stages, base_channels, k)?;
    let mut x = stage(&mut b, pooled, base_channels << stages, k)?;
    for s in (0..stages).rev() {
        let up = b.upsample(x)?;
        let merged = b.concat(up, skips[s])?;
        b.skip(skips[s], merged)?;
        x = stage(&mut b, merged, base_channels << s, k)?;
    }
    let logits = b.classifier(x, n_c)?;
    debug_assert_eq!(b.level(logits), 0);
    Ok(b.finish(format!(
        "segnet d={d} n_f={n_f} n_c={n_c} stages={stages} base={base_channels} k={k} factor={factor}"
    )))
}

/// Encoder followed by a global max pool over the remaining points and a
/// dense layer producing `n_classes` logits.
pub fn build_classifier(
    d: usize,
    n_f: usize,
    n_classes: usize,
    stages: usize,
    base_channels: usize,
    k: usize,
) -> Result<LayerGraph> {
    check_common(d, n_f, stages, base_channels, k)?;
    if n_classes < 2 {
        return Err(EngineError::config("classification needs at least two classes"));
    }
    let mut b = GraphBuilder::new(d, n_f)?;
    let (pooled, _) = encoder(&mut b, stages, base_channels, k)?;
    let global = b.global_pool(pooled);
    b.dense(global, n_classes)?;
    Ok(b.finish(format!(
        "classifier d={d} n_f={n_f} n_classes={n_classes} stages={stages} base={base_channels} k={k}"
    )))
}
