//! Training and inference loops over prepared samples.

use crate::error::{EngineError, Result};
use crate::network::{adam_step, argmax_rows, softmax_cross_entropy, AdamState, LayerGraph, LrSchedule};
use crate::rng::Rng;
use crate::sampling::{build_hierarchy, ResolutionHierarchy, SamplingMode};
use crate::tensor::Matrix;

use super::synth::{normalize_locations, LabeledCloud};

/// A cloud ready for the network: its hierarchy, input features and
/// labels (one per point for segmentation, one per cloud for
/// classification).
#[derive(Debug, Clone)]
pub struct Sample {
    pub hierarchy: ResolutionHierarchy,
    pub features: Matrix,
    pub labels: Vec<usize>,
}

/// Normalizes locations to zero mean and unit RMS radius, then builds the
/// resolution hierarchy.
pub fn prepare_sample(
    data: &LabeledCloud,
    k: usize,
    factor: usize,
    depth: usize,
    mode: SamplingMode,
    rng: &mut Rng,
) -> Result<Sample> {
    let cloud = normalize_locations(&data.cloud);
    let hierarchy = build_hierarchy(&cloud, k, factor, depth, rng, mode)?;
    Ok(Sample {
        hierarchy,
        features: cloud.features,
        labels: data.labels.clone(),
    })
}

/// Mean loss and summed-then-averaged gradient over a batch.
pub fn batch_gradient(graph: &mut LayerGraph, batch: &[&Sample]) -> Result<(f64, Vec<f64>)> {
    let mut total = vec![0.0; graph.param_count()];
    let mut loss = 0.0;
    for sample in batch {
        let logits = graph.forward(&sample.hierarchy, &sample.features)?;
        let (l, g) = softmax_cross_entropy(&logits, &sample.labels)?;
        let grads = graph.backward(&sample.hierarchy, &g)?;
        loss += l;
        for (t, v) in total.iter_mut().zip(grads) {
            *t += v;
        }
    }
    let scale = 1.0 / batch.len() as f64;
    total.iter_mut().for_each(|v| *v *= scale);
    Ok((loss * scale, total))
}

/// Runs `steps` Adam steps over shuffled passes through `samples`, calling
/// `on_step(step, loss)` after each. The rate follows `schedule` from the
/// value in `adam.lr`, which is restored on return. Returns the per-step
/// losses.
#[allow(clippy::too_many_arguments)]
pub fn train(
    graph: &mut LayerGraph,
    adam: &mut AdamState,
    samples: &[Sample],
    steps: usize,
    batch: usize,
    schedule: LrSchedule,
    rng: &mut Rng,
    mut on_step: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(EngineError::empty("no training samples"));
    }
    if batch == 0 {
        return Err(EngineError::config("batch size must be positive"));
    }
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut losses = Vec::with_capacity(steps);
    let base = adam.lr;
    for step in 0..steps {
        let mut picked = Vec::with_capacity(batch);
        while picked.len() < batch {
            if cursor == order.len() {
                order = (0..samples.len()).collect();
                for i in (1..order.len()).rev() {
                    order.swap(i, rng.below(i + 1));
                }
                cursor = 0;
            }
            picked.push(&samples[order[cursor]]);
            cursor += 1;
        }
        let (loss, grads) = batch_gradient(graph, &picked)?;
        if !loss.is_finite() {
            return Err(EngineError::non_finite(format!("loss diverged at step {step}")));
        }
        adam.lr = schedule.lr_at(base, step, steps);
        let applied = adam_step(adam, &mut graph.params.values, &grads);
        adam.lr = base;
        applied?;
        losses.push(loss);
        on_step(step, loss);
    }
    Ok(losses)
}

/// Arg-max class per output row.
pub fn predict(graph: &mut LayerGraph, sample: &Sample) -> Result<Vec<usize>> {
    let logits = graph.forward(&sample.hierarchy, &sample.features)?;
    Ok(argmax_rows(&logits))
}
