//! Property checks shared by the invariant tests and the acceptance runner.

use flexconv::flexops::{flex_conv_backward, flex_conv_forward, flex_max_pool, FlexConvParams};
use flexconv::network::softmax_cross_entropy;
use flexconv::sampling::{build_hierarchy, SamplingMode};
use flexconv::{knn, knn_brute_force, Matrix, Rng};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

use super::{random_cloud, random_matrix, small_segnet};

pub type Check = Result<(), TestCaseError>;

pub fn params_from(seed: u64, c_in: usize, c_out: usize, d: usize) -> FlexConvParams {
    let mut rng = Rng::new(seed);
    let len = c_in * c_out;
    FlexConvParams::new(
        c_in,
        c_out,
        d,
        (0..len * d).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
        (0..len).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
    )
    .unwrap()
}

pub fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()
}

pub fn translation_strategy() -> impl Strategy<Value = (usize, usize, u64, Vec<i32>)> {
    (2usize..60, 1usize..4, any::<u64>(), prop::collection::vec(-64i32..64, 3))
}

pub fn translation((n, d, seed, shift): (usize, usize, u64, Vec<i32>)) -> Check {
    let mut rng = Rng::new(seed);
    // coordinates and shifts on a 1/8 grid keep every difference exact
    let coords: Vec<f64> = (0..n * d).map(|_| (rng.below(257) as f64 - 128.0) / 8.0).collect();
    let loc = Matrix::from_vec(n, d, coords).unwrap();
    let mut moved = loc.clone();
    for i in 0..n {
        for t in 0..d {
            moved.row_mut(i)[t] += shift[t] as f64 / 4.0;
        }
    }
    let k = 1 + rng.below(n.min(8));
    let f = random_matrix(n, 3, &mut rng);
    let p = params_from(seed ^ 1, 3, 2, d);
    let nb = knn(&loc, k).unwrap();
    let nb_moved = knn(&moved, k).unwrap();
    prop_assert_eq!(&nb, &nb_moved);
    let a = flex_conv_forward(&f, &loc, &nb, &p).unwrap();
    let b = flex_conv_forward(&f, &moved, &nb_moved, &p).unwrap();
    prop_assert_eq!(a.as_slice(), b.as_slice());
    Ok(())
}

pub fn permutation_strategy() -> impl Strategy<Value = (usize, usize, u64)> {
    (2usize..60, 1usize..4, any::<u64>())
}

pub fn permutation((n, d, seed): (usize, usize, u64)) -> Check {
    let mut rng = Rng::new(seed);
    let loc = random_matrix(n, d, &mut rng);
    let f = random_matrix(n, 2, &mut rng);
    let k = 1 + rng.below(n.min(8));
    let p = params_from(seed ^ 7, 2, 3, d);
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.below(i + 1));
    }
    let out = flex_conv_forward(&f, &loc, &knn(&loc, k).unwrap(), &p).unwrap();
    let loc_p = loc.gather_rows(&perm).unwrap();
    let f_p = f.gather_rows(&perm).unwrap();
    let out_p = flex_conv_forward(&f_p, &loc_p, &knn(&loc_p, k).unwrap(), &p).unwrap();
    prop_assert!(out.gather_rows(&perm).unwrap().max_abs_diff(&out_p) <= 1e-12);
    Ok(())
}

pub fn knn_strategy() -> impl Strategy<Value = (usize, usize, usize, u64, bool)> {
    (1usize..=2000, 1usize..5, 1usize..17, any::<u64>(), any::<bool>())
}

pub fn knn_matches_brute_force((n, d, k_raw, seed, lattice): (usize, usize, usize, u64, bool)) -> Check {
    let mut rng = Rng::new(seed);
    // a coarse lattice produces many distance ties and duplicates
    let coords: Vec<f64> = (0..n * d)
        .map(|_| if lattice { rng.below(6) as f64 } else { rng.uniform() })
        .collect();
    let loc = Matrix::from_vec(n, d, coords).unwrap();
    let k = k_raw.min(n);
    prop_assert_eq!(knn(&loc, k).unwrap(), knn_brute_force(&loc, k).unwrap());
    Ok(())
}

pub fn pooling_strategy() -> impl Strategy<Value = (usize, usize, u64)> {
    (1usize..80, 1usize..5, any::<u64>())
}

pub fn pooling_dominance((n, c, seed): (usize, usize, u64)) -> Check {
    let mut rng = Rng::new(seed);
    let loc = random_matrix(n, 2, &mut rng);
    let f = random_matrix(n, c, &mut rng);
    let nb = knn(&loc, (1 + rng.below(8)).min(n)).unwrap();
    let (pooled, rec) = flex_max_pool(&f, &nb).unwrap();
    for i in 0..n {
        for ch in 0..c {
            for &j in nb.row(i) {
                prop_assert!(pooled.get(i, ch) >= f.get(j, ch));
            }
            let w = rec.argmax(i, ch);
            prop_assert!(nb.row(i).contains(&w));
            prop_assert_eq!(pooled.get(i, ch), f.get(w, ch));
        }
    }
    Ok(())
}

pub fn determinism_strategy() -> impl Strategy<Value = (usize, u64)> {
    (300usize..1500, any::<u64>())
}

/// Hierarchy, forward and backward agree bitwise on 1 and 4 threads.
pub fn thread_count_determinism((n, seed): (usize, u64)) -> Check {
    let run = |threads: usize| {
        pool(threads).install(|| {
            let mut rng = Rng::new(seed);
            let cloud = random_cloud(n, 3, 4, &mut rng);
            let h = build_hierarchy(&cloud, 8, 4, 2, &mut rng, SamplingMode::Idiss).unwrap();
            let level = h.level(0);
            let p = params_from(seed, 4, 5, 3);
            let out = flex_conv_forward(&cloud.features, &cloud.locations, &level.neighbors, &p).unwrap();
            let up = random_matrix(n, 5, &mut rng);
            let g = flex_conv_backward(&up, &cloud.features, &cloud.locations, &level.neighbors, &p).unwrap();
            (h.origin_indices(2), out, g)
        })
    };
    let (sel1, out1, g1) = run(1);
    let (sel4, out4, g4) = run(4);
    prop_assert_eq!(sel1, sel4);
    prop_assert_eq!(out1, out4);
    prop_assert_eq!(g1, g4);
    Ok(())
}

/// One network gradient evaluation on 1 and 3 threads, compared bitwise.
pub fn network_determinism(seed: u64) -> Check {
    let run = |threads: usize| {
        pool(threads).install(|| {
            let mut net = small_segnet(seed);
            let logits = net.graph.forward(&net.hierarchy, &net.features).unwrap();
            let (_, g) = softmax_cross_entropy(&logits, &net.labels).unwrap();
            net.graph.backward(&net.hierarchy, &g).unwrap()
        })
    };
    prop_assert_eq!(run(1), run(3));
    Ok(())
}

/// Runs `check` over `cases` generated inputs with a fixed RNG seed,
/// returning the shrunk failure if any.
pub fn run_property<S: Strategy>(
    cases: u32,
    strategy: S,
    check: impl Fn(S::Value) -> Check,
) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let rng = TestRng::deterministic_rng(RngAlgorithm::ChaCha);
    TestRunner::new_with_rng(config, rng)
        .run(&strategy, check)
        .map_err(|e| e.to_string())
}
