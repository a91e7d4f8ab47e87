#![allow(dead_code)]

pub mod props;

use flexconv::flexops::{flex_conv_backward, flex_conv_forward_split, FlexConvParams};
use flexconv::harness::{dense_conv2d, kernel_from_flex};
use flexconv::network::{build_segnet, softmax_cross_entropy, LayerGraph};
use flexconv::sampling::{build_hierarchy, ResolutionHierarchy, SamplingMode};
use flexconv::{image_to_cloud, knn, DenseImage, Matrix, NeighborIndex, PointCloud, Rng};

pub fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap()
}

pub struct FlexInstance {
    pub features: Matrix,
    pub locations: Matrix,
    pub neighbors: NeighborIndex,
    pub params: FlexConvParams,
}

pub fn random_instance(rng: &mut Rng) -> FlexInstance {
    let n = 2 + rng.below(31);
    let k = 1 + rng.below(8.min(n));
    let c_in = 1 + rng.below(4);
    let c_out = 1 + rng.below(4);
    let d = 1 + rng.below(3);
    let locations = random_matrix(n, d, rng);
    let neighbors = knn(&locations, k).unwrap();
    let features = random_matrix(n, c_in, rng);
    let len = c_out * c_in;
    let params = FlexConvParams::new(
        c_in,
        c_out,
        d,
        (0..len * d).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
        (0..len).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
    )
    .unwrap();
    FlexInstance {
        features,
        locations,
        neighbors,
        params,
    }
}

/// Denominator floor of [`relative_error`].
pub const ERROR_FLOOR: f64 = 1e-3;

/// `||a - b|| / max(||a||, ||b||, ERROR_FLOOR)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(ERROR_FLOOR)
}

/// Central differences of `f` at every entry of `x`.
pub fn numeric_gradient(x: &mut [f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(x);
            x[i] = orig - h;
            let down = f(x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Relative errors of the analytic flex-conv gradients against central
/// differences of `L = sum(r * out)`, in the order features, theta,
/// theta_b, center locations, neighbor locations, total locations.
pub fn flex_gradient_errors(inst: &FlexInstance, rng: &mut Rng) -> [f64; 6] {
    let FlexInstance {
        features,
        locations,
        neighbors,
        params,
    } = inst;
    let (n, c_out) = (features.rows(), params.c_out());
    let r = random_matrix(n, c_out, rng);
    let loss = |f: &Matrix, centers: &Matrix, sources: &Matrix, p: &FlexConvParams| -> f64 {
        let out = flex_conv_forward_split(f, centers, sources, neighbors, p).unwrap();
        out.as_slice().iter().zip(r.as_slice()).map(|(a, b)| a * b).sum()
    };
    let g = flex_conv_backward(&r, features, locations, neighbors, params).unwrap();
    let h = 1e-5;

    let mut fv = features.as_slice().to_vec();
    let nf = numeric_gradient(&mut fv, h, |v| {
        loss(&Matrix::from_vec(n, features.cols(), v.to_vec()).unwrap(), locations, locations, params)
    });
    let mut tv = params.theta.clone();
    let nt = numeric_gradient(&mut tv, h, |v| {
        let mut p = params.clone();
        p.theta.copy_from_slice(v);
        loss(features, locations, locations, &p)
    });
    let mut bv = params.theta_b.clone();
    let nb = numeric_gradient(&mut bv, h, |v| {
        let mut p = params.clone();
        p.theta_b.copy_from_slice(v);
        loss(features, locations, locations, &p)
    });
    let d = locations.cols();
    let mut lv = locations.as_slice().to_vec();
    let nc = numeric_gradient(&mut lv, h, |v| {
        loss(features, &Matrix::from_vec(n, d, v.to_vec()).unwrap(), locations, params)
    });
    let ns = numeric_gradient(&mut lv, h, |v| {
        loss(features, locations, &Matrix::from_vec(n, d, v.to_vec()).unwrap(), params)
    });
    let nl = numeric_gradient(&mut lv, h, |v| {
        let l = Matrix::from_vec(n, d, v.to_vec()).unwrap();
        loss(features, &l, &l, params)
    });
    [
        relative_error(g.d_features.as_slice(), &nf),
        relative_error(&g.d_theta, &nt),
        relative_error(&g.d_theta_b, &nb),
        relative_error(g.d_locations_center.as_slice(), &nc),
        relative_error(g.d_locations_neighbor.as_slice(), &ns),
        relative_error(g.d_locations.as_slice(), &nl),
    ]
}

/// Largest absolute difference between flex-conv on an image-as-cloud with
/// 3x3 neighborhoods and the dense oracle, over interior pixels.
pub fn grid_trial(rng: &mut Rng) -> f64 {
    let h = 3 + rng.below(14);
    let w = 3 + rng.below(14);
    let img = DenseImage::new(h, w, 1, (0..h * w).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap();
    let theta = [rng.uniform_range(-2.0, 2.0), rng.uniform_range(-2.0, 2.0)];
    let theta_b = rng.uniform_range(-2.0, 2.0);
    let cloud = image_to_cloud(&img).unwrap();
    let neighbors = knn(&cloud.locations, 9).unwrap();
    let params = FlexConvParams::new(1, 1, 2, theta.to_vec(), vec![theta_b]).unwrap();
    let flex = flex_conv_forward_split(&cloud.features, &cloud.locations, &cloud.locations, &neighbors, &params).unwrap();
    let dense = dense_conv2d(&img, &kernel_from_flex(theta, theta_b)).unwrap();
    let mut worst: f64 = 0.0;
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            let a = flex.get(r * w + c, 0);
            let b = dense.at(r - 1, c - 1, 0);
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

pub fn random_cloud(n: usize, d: usize, channels: usize, rng: &mut Rng) -> PointCloud {
    PointCloud::new(random_matrix(n, d, rng), random_matrix(n, channels, rng)).unwrap()
}

pub struct SmallNet {
    pub graph: LayerGraph,
    pub hierarchy: ResolutionHierarchy,
    pub features: Matrix,
    pub labels: Vec<usize>,
}

/// One-stage segmentation network on a small random cloud.
pub fn small_segnet(seed: u64) -> SmallNet {
    let mut rng = Rng::new(seed);
    let cloud = random_cloud(40, 3, 2, &mut rng);
    let hierarchy = build_hierarchy(&cloud, 4, 4, 1, &mut rng, SamplingMode::Idiss).unwrap();
    let mut graph = build_segnet(3, 2, 3, 1, 2, 4, 4).unwrap();
    graph.initialize(&hierarchy, &mut rng).unwrap();
    // break exact ties so max pooling has unique winners
    for v in graph.params.values.iter_mut() {
        *v += 0.05 * rng.uniform_range(-1.0, 1.0);
    }
    let labels = (0..40).map(|_| rng.below(3)).collect();
    SmallNet {
        graph,
        features: cloud.features.clone(),
        hierarchy,
        labels,
    }
}

/// Relative error of the whole-graph parameter gradient of the mean
/// cross-entropy against central differences.
pub fn whole_graph_error(net: &mut SmallNet) -> f64 {
    let logits = net.graph.forward(&net.hierarchy, &net.features).unwrap();
    let (_, g) = softmax_cross_entropy(&logits, &net.labels).unwrap();
    let analytic = net.graph.backward(&net.hierarchy, &g).unwrap();
    let mut values = net.graph.params.values.clone();
    let graph = &mut net.graph;
    let (hierarchy, features, labels) = (&net.hierarchy, &net.features, &net.labels);
    let numeric = numeric_gradient(&mut values, 1e-6, |v| {
        graph.params.values.copy_from_slice(v);
        let logits = graph.forward(hierarchy, features).unwrap();
        softmax_cross_entropy(&logits, labels).unwrap().0
    });
    graph.params.values.copy_from_slice(&values);
    relative_error(&analytic, &numeric)
}
