//! Trainable layer graphs: the encoder/decoder segmentation network, the
//! classification variant, cross-entropy loss, Adam and checkpoints.

mod adam;
mod build;
mod checkpoint;
mod graph;
mod loss;

pub use adam::{adam_step, AdamState, LrSchedule, DEFAULT_LR};
pub use build::{build_classifier, build_segnet};
pub use checkpoint::Checkpoint;
pub use graph::{LayerGraph, LayerKind, LayerSpec, LocationMode, NodeId, ParamStore, ParamView};
pub use loss::{argmax_rows, softmax, softmax_cross_entropy};

use crate::error::Result;
use crate::sampling::ResolutionHierarchy;
use crate::tensor::Matrix;

/// Free-function form of [`LayerGraph::forward`].
pub fn forward(graph: &mut LayerGraph, hierarchy: &ResolutionHierarchy, features: &Matrix) -> Result<Matrix> {
    graph.forward(hierarchy, features)
}

/// Free-function form of [`LayerGraph::backward`].
pub fn backward(graph: &mut LayerGraph, hierarchy: &ResolutionHierarchy, loss_grad: &Matrix) -> Result<Vec<f64>> {
    graph.backward(hierarchy, loss_grad)
}
