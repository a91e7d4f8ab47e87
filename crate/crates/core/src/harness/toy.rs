//! Single-layer image regression: one flex-conv filter learns a 3x3 image
//! operator that it can represent exactly.

use crate::cloud::{image_to_cloud, DenseImage};
use crate::error::{EngineError, Result};
use crate::flexops::{flex_conv_backward, flex_conv_forward, FlexConvParams};
use crate::neighborhood::{knn, NeighborIndex};
use crate::network::{adam_step, AdamState};
use crate::rng::Rng;
use crate::tensor::Matrix;

use super::oracle::{dense_conv2d, kernel_from_flex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyKind {
    PrewittX,
    PrewittY,
    Blur,
    SyntheticShapesSeg,
    TwoClassClouds,
}

impl ToyKind {
    /// Flex parameters `(theta, theta_b)` reproducing the target operator,
    /// for the image regression kinds.
    pub fn flex_target(self) -> Option<([f64; 2], f64)> {
        match self {
            ToyKind::PrewittX => Some(([1.0, 0.0], 0.0)),
            ToyKind::PrewittY => Some(([0.0, 1.0], 0.0)),
            ToyKind::Blur => Some(([0.0, 0.0], 1.0 / 9.0)),
            ToyKind::SyntheticShapesSeg | ToyKind::TwoClassClouds => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTask {
    pub kind: ToyKind,
    /// Side length of the square training images.
    pub image_size: usize,
    pub seed: u64,
}

impl ToyTask {
    pub fn new(kind: ToyKind, image_size: usize, seed: u64) -> Self {
        Self {
            kind,
            image_size,
            seed,
        }
    }

    /// Uniform-noise image; a pure function of the task seed and `index`.
    pub fn image(&self, index: u64) -> Result<DenseImage> {
        let mut rng = Rng::new(self.seed).derive(index);
        let s = self.image_size;
        DenseImage::new(s, s, 1, (0..s * s).map(|_| rng.uniform()).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyResult {
    pub initial_mse: f64,
    pub final_mse: f64,
    pub theta: [f64; 2],
    pub theta_b: f64,
    /// Training loss per step.
    pub losses: Vec<f64>,
}

struct ToyProblem {
    locations: Matrix,
    neighbors: NeighborIndex,
    /// Flat indices of interior pixels, in raster order.
    interior: Vec<usize>,
}

impl ToyProblem {
    fn new(size: usize) -> Result<Self> {
        if size < 3 {
            return Err(EngineError::config("toy images need a side of at least 3"));
        }
        let probe = DenseImage::from_fn(size, size, |_, _| 0.0)?;
        let locations = image_to_cloud(&probe)?.locations;
        let neighbors = knn(&locations, 9)?;
        let interior = (1..size - 1)
            .flat_map(|r| (1..size - 1).map(move |c| r * size + c))
            .collect();
        Ok(Self {
            locations,
            neighbors,
            interior,
        })
    }

    /// Mean squared error over interior pixels and its gradient.
    fn loss(&self, img: &DenseImage, target: &DenseImage, params: &FlexConvParams, want_grad: bool) -> Result<(f64, Option<(Vec<f64>, Vec<f64>)>)> {
        let features = image_to_cloud(img)?.features;
        let out = flex_conv_forward(&features, &self.locations, &self.neighbors, params)?;
        let count = self.interior.len() as f64;
        let mut upstream = Matrix::zeros(out.rows(), 1);
        let mut mse = 0.0;
        for (t, &i) in self.interior.iter().enumerate() {
            let resid = out.get(i, 0) - target.pixels()[t];
            mse += resid * resid;
            upstream.set(i, 0, 2.0 * resid / count);
        }
        mse /= count;
        if !mse.is_finite() {
            return Err(EngineError::non_finite("toy regression diverged"));
        }
        if !want_grad {
            return Ok((mse, None));
        }
        let g = flex_conv_backward(&upstream, &features, &self.locations, &self.neighbors, params)?;
        Ok((mse, Some((g.d_theta, g.d_theta_b))))
    }
}

/// Trains `(theta, theta_b)` of a single-channel flex-conv on 3x3 grid
/// neighborhoods against the dense operator of `task` on the task's first
/// noise image. Initial and final MSE are measured on a held-out image.
pub fn run_toy_regression(task: &ToyTask, steps: usize, lr: f64, rng: &mut Rng) -> Result<ToyResult> {
    let (theta_true, b_true) = task
        .kind
        .flex_target()
        .ok_or_else(|| EngineError::config(format!("{:?} is not an image regression task", task.kind)))?;
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(EngineError::config(format!("learning rate {lr} must be positive")));
    }
    let oracle = kernel_from_flex(theta_true, b_true);
    let problem = ToyProblem::new(task.image_size)?;

    let mut params = FlexConvParams::new(
        1,
        1,
        2,
        vec![rng.uniform_range(-0.5, 0.5), rng.uniform_range(-0.5, 0.5)],
        vec![rng.uniform_range(-0.5, 0.5)],
    )?;
    let eval_img = task.image(u64::MAX)?;
    let eval_target = dense_conv2d(&eval_img, &oracle)?;
    let (initial_mse, _) = problem.loss(&eval_img, &eval_target, &params, false)?;

    let img = task.image(0)?;
    let target = dense_conv2d(&img, &oracle)?;
    let mut adam = AdamState::new(3, lr);
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (mse, grads) = problem.loss(&img, &target, &params, true)?;
        let (d_theta, d_b) = grads.expect("gradient requested");
        losses.push(mse);
        let mut flat = [params.theta[0], params.theta[1], params.theta_b[0]];
        adam_step(&mut adam, &mut flat, &[d_theta[0], d_theta[1], d_b[0]])?;
        params.theta.copy_from_slice(&flat[..2]);
        params.theta_b[0] = flat[2];
    }
    let (final_mse, _) = problem.loss(&eval_img, &eval_target, &params, false)?;
    Ok(ToyResult {
        initial_mse,
        final_mse,
        theta: [params.theta[0], params.theta[1]],
        theta_b: params.theta_b[0],
        losses,
    })
}
