//! Flex-convolution for irregular point clouds.
//!
//! The crate provides the operator family (flex-convolution, flex-max-pooling,
//! flex-upsampling, pointwise convolution) with analytic gradients, exact kNN
//! neighborhoods from a kD-tree, inverse-density importance subsampling,
//! a small trainable encoder/decoder, and the experiment harness used by the
//! `flexconv` command-line tool.

pub mod cloud;
pub mod error;
pub mod flexops;
pub mod harness;
pub mod neighborhood;
pub mod network;
pub mod rng;
pub mod sampling;
pub mod tensor;

pub use cloud::{image_to_cloud, validate_cloud, DenseImage, PointCloud};
pub use error::{EngineError, ErrorKind, Result};
pub use neighborhood::{knn, knn_brute_force, knn_query, KdTree, NeighborIndex};
pub use rng::Rng;
pub use tensor::Matrix;
