//! Acceptance runner: one PASS/FAIL line per criterion, criteria run one
//! after another so timings do not interfere. Exits nonzero on any failure.

mod common;

use std::time::{Duration, Instant};

use common::props::*;
use common::*;
use flexconv::flexops::param_count;
use flexconv::harness::{
    bench_cloud, bench_scaling, evaluate_predictions, gen_synthetic_seg, memory_estimate, predict, prepare_sample,
    run_toy_regression, train, Precision, PrimitiveKind, Sample, ToyKind, ToyTask,
};
use flexconv::network::{build_segnet, AdamState, LrSchedule, DEFAULT_LR};
use flexconv::sampling::{idiss_sample, inverse_density, DensityEstimate, SamplingMode};
use flexconv::{knn, KdTree, Rng};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(limit: Duration, start: Instant) -> (bool, String) {
    let t = start.elapsed();
    (t < limit, format!("{:.1}s of {:.0}s", t.as_secs_f64(), limit.as_secs_f64()))
}

fn grid_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::new(1);
    let worst = (0..100).map(|_| grid_trial(&mut rng)).fold(0.0, f64::max);
    let (fast, time) = within(Duration::from_secs(10), start);
    outcome(worst <= 1e-12 && fast, format!("100 trials, max |flex - dense| = {worst:.2e} (<= 1e-12), {time}"))
}

fn gradient_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::new(2);
    let mut worst = [0.0f64; 6];
    let instances = 120;
    for _ in 0..instances {
        let inst = random_instance(&mut rng);
        for (w, e) in worst.iter_mut().zip(flex_gradient_errors(&inst, &mut rng)) {
            *w = w.max(e);
        }
    }
    let graph = (0..3).map(|s| whole_graph_error(&mut small_segnet(100 + s))).fold(0.0, f64::max);
    let (fast, time) = within(Duration::from_secs(60), start);
    let flex_ok = worst.iter().all(|&w| w < 1e-6);
    outcome(
        flex_ok && graph < 1e-4 && fast,
        format!(
            "{instances} instances, max rel err features {:.1e} theta {:.1e} theta_b {:.1e} center {:.1e} neighbor {:.1e} total {:.1e} (< 1e-6); 1-stage network {graph:.1e} (< 1e-4); {time}",
            worst[0], worst[1], worst[2], worst[3], worst[4], worst[5]
        ),
    )
}

fn toy_reproduction() -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, kind) in [ToyKind::PrewittX, ToyKind::PrewittY, ToyKind::Blur].into_iter().enumerate() {
        let task = ToyTask::new(kind, 64, 30 + i as u64);
        let (theta, b) = kind.flex_target().unwrap();
        match run_toy_regression(&task, 2000, DEFAULT_LR, &mut Rng::new(31 + i as u64)) {
            Ok(r) => {
                let err = (r.theta[0] - theta[0])
                    .abs()
                    .max((r.theta[1] - theta[1]).abs())
                    .max((r.theta_b - b).abs());
                pass &= r.final_mse < 1e-6 && err < 1e-3;
                parts.push(format!("{kind:?} mse {:.1e} param err {err:.1e}", r.final_mse));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{kind:?} failed: {e}"));
            }
        }
    }
    let (fast, time) = within(Duration::from_secs(300), start);
    outcome(pass && fast, format!("{} (mse < 1e-6, err < 1e-3); {time}", parts.join(", ")))
}

/// First-draw frequencies against `phi / sum(phi)`; returns the largest
/// deviation in standard deviations and the frequencies.
fn first_draw_check(phi: &[f64], draws: usize, rng: &mut Rng) -> (f64, Vec<f64>) {
    let density = DensityEstimate { phi: phi.to_vec() };
    let mut counts = vec![0usize; phi.len()];
    for _ in 0..draws {
        counts[idiss_sample(&density, 1, rng).unwrap().indices()[0]] += 1;
    }
    let total: f64 = phi.iter().sum();
    let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / draws as f64).collect();
    let worst = phi
        .iter()
        .zip(&freq)
        .map(|(&p, &f)| {
            let p = p / total;
            let sigma = (p * (1.0 - p) / draws as f64).sqrt();
            if sigma == 0.0 {
                if f == p { 0.0 } else { f64::INFINITY }
            } else {
                (f - p).abs() / sigma
            }
        })
        .fold(0.0, f64::max);
    (worst, freq)
}

fn idiss_distribution() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::new(4);
    let draws = 100_000;
    let (z1, freq) = first_draw_check(&[4.0, 3.0, 5.0], draws, &mut rng);
    let p2_ok = (freq[2] - 5.0 / 12.0).abs() <= 0.01;
    let mut phi_rng = Rng::new(40);
    let phi: Vec<f64> = (0..32).map(|i| if i % 7 == 3 { 0.0 } else { phi_rng.uniform_range(0.1, 5.0) }).collect();
    let (z2, _) = first_draw_check(&phi, draws, &mut rng);
    let (fast, time) = within(Duration::from_secs(30), start);
    outcome(
        z1 <= 3.0 && z2 <= 3.0 && p2_ok && fast,
        format!(
            "phi=[4,3,5]: P(2) = {:.4} (5/12 +- 0.01), max dev {z1:.2} sigma; 32-entry phi: max dev {z2:.2} sigma (<= 3); {time}",
            freq[2]
        ),
    )
}

fn doubling_ratios(times: &[f64]) -> Vec<f64> {
    times.windows(2).map(|w| w[1] / w[0]).collect()
}

fn linear_scaling() -> Outcome {
    let start = Instant::now();
    let sizes = [100_000, 200_000, 400_000, 800_000];
    let rows = match bench_scaling(&sizes, 8, 16, 7, false, &mut Rng::new(5)) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("benchmark failed: {e}")),
    };
    let fwd: Vec<f64> = rows.iter().map(|r| r.forward_s).collect();
    let ratios = doubling_ratios(&fwd);
    let ok = ratios.iter().all(|r| (1.5..=3.0).contains(r));
    let (fast, time) = within(Duration::from_secs(600), start);
    outcome(
        ok && fast,
        format!(
            "forward medians {:?} s on {} thread(s), doubling ratios {:?} (in [1.5, 3.0]); {time}",
            fwd.iter().map(|t| format!("{t:.4}")).collect::<Vec<_>>(),
            rows[0].threads,
            ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>()
        ),
    )
}

fn memory_footprint() -> Outcome {
    let m = memory_estimate(8 * 4096, 9, 64, 64, 3, Precision::F32);
    let mb = m.output as f64 / 1e6;
    let rounded = format!("{mb:.2}");
    outcome(
        m.output == 8_388_608 && rounded == "8.39" && format!("{mb:.1}") == "8.4",
        format!("output buffer {} B = {rounded} MB (reported 8.4MB)", m.output),
    )
}

fn parameter_economy() -> Outcome {
    let mut ok = true;
    for c_in in 1..=64 {
        for c_out in [1, 7, 16, 64] {
            ok &= param_count(c_in, c_out, 3) == c_out * c_in * 4;
        }
    }
    let grid = 27 * 64 * 64;
    let ratio = grid as f64 / param_count(64, 64, 3) as f64;
    ok &= ratio == 6.75;
    outcome(ok, format!("param_count(C, C', 3) = 4 C C'; 3x3x3 grid kernel / flex = {ratio} (6.75)"))
}

/// Loss trend over ten equal windows: at most two window-to-window
/// increases and a last window below the first.
fn monotone_trend(losses: &[f64]) -> (bool, Vec<f64>) {
    let w = (losses.len() / 10).max(1);
    let means: Vec<f64> = losses.chunks(w).take(10).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    let rises = means.windows(2).filter(|p| p[1] > p[0]).count();
    (rises <= 2 && means.last() < means.first(), means)
}

const SEG_SCENES: usize = 200;
const SEG_HELD_OUT: usize = 20;
const SEG_POINTS: usize = 4096;
const SEG_BASE: usize = 8;
const SEG_K: usize = 8;
const SEG_EPOCHS: usize = 20;
const SEG_BUDGET: Duration = Duration::from_secs(30 * 60);

fn desk_segmentation() -> Outcome {
    let classes = [PrimitiveKind::Plane, PrimitiveKind::Sphere, PrimitiveKind::Cuboid];
    let rng = Rng::new(8);
    let scenes = match gen_synthetic_seg(SEG_POINTS, SEG_SCENES, &classes, &mut rng.derive(1)) {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("generation failed: {e}")),
    };
    let mut prep = rng.derive(2);
    let samples: Vec<Sample> = scenes
        .iter()
        .map(|s| prepare_sample(&s.data, SEG_K, 4, 2, SamplingMode::Idiss, &mut prep).unwrap())
        .collect();
    let (train_set, test_set) = samples.split_at(SEG_SCENES - SEG_HELD_OUT);
    let mut graph = build_segnet(3, 1, 3, 2, SEG_BASE, SEG_K, 4).unwrap();
    graph.initialize(&train_set[0].hierarchy, &mut rng.derive(3)).unwrap();
    let mut adam = AdamState::with_defaults(graph.param_count());
    let mut order_rng = rng.derive(4);

    let start = Instant::now();
    let steps = SEG_EPOCHS * train_set.len();
    let losses = match train(&mut graph, &mut adam, train_set, steps, 1, LrSchedule::Cosine, &mut order_rng, |_, _| {}) {
        Ok(l) => l,
        Err(e) => return outcome(false, format!("training failed: {e}")),
    };
    let trained = start.elapsed();
    let mut predictions = Vec::new();
    let mut labels = Vec::new();
    for s in test_set {
        predictions.extend(predict(&mut graph, s).unwrap());
        labels.extend_from_slice(&s.labels);
    }
    let m = evaluate_predictions(&predictions, &labels, 3).unwrap();
    let (trend, means) = monotone_trend(&losses);
    outcome(
        m.miou >= 0.90 && trend && trained <= SEG_BUDGET,
        format!(
            "held-out mIoU {:.3} (>= 0.90), accuracy {:.3}, IoU {:?}; {SEG_EPOCHS} epochs in {:.0}s (<= 1800s); window losses {:?}",
            m.miou,
            m.accuracy,
            m.iou.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>(),
            trained.as_secs_f64(),
            means.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>()
        ),
    )
}

fn invariant_suites() -> Outcome {
    let start = Instant::now();
    let results = [
        ("translation", run_property(64, translation_strategy(), translation)),
        ("permutation", run_property(64, permutation_strategy(), permutation)),
        ("knn", run_property(64, knn_strategy(), knn_matches_brute_force)),
        ("pooling", run_property(64, pooling_strategy(), pooling_dominance)),
        ("threads", run_property(16, determinism_strategy(), thread_count_determinism)),
        ("network threads", network_determinism(11).map_err(|e| e.to_string())),
    ];
    let failed: Vec<String> = results
        .iter()
        .filter_map(|(name, r)| r.as_ref().err().map(|e| format!("{name}: {e}")))
        .collect();
    let (fast, time) = within(Duration::from_secs(120), start);
    let names: Vec<&str> = results.iter().map(|r| r.0).collect();
    if failed.is_empty() {
        outcome(fast, format!("{} all hold; {time}", names.join(", ")))
    } else {
        outcome(false, format!("{}; {time}", failed.join("; ")))
    }
}

fn toy_loss_decreases() -> Outcome {
    let mut worst = 0;
    for kind in [ToyKind::PrewittX, ToyKind::PrewittY, ToyKind::Blur] {
        let r = run_toy_regression(&ToyTask::new(kind, 64, 50), 51, DEFAULT_LR, &mut Rng::new(51)).unwrap();
        let rises = r.losses.windows(2).filter(|w| w[1] > w[0]).count();
        worst = worst.max(rises);
    }
    outcome(worst <= 5, format!("at most {worst} increases over the first 50 steps (<= 5)"))
}

fn density_sampling_scaling() -> Outcome {
    let mut rng = Rng::new(60);
    let mut times = Vec::new();
    for n in [100_000, 200_000, 400_000] {
        let locations = bench_cloud(n, 3, &mut rng).unwrap();
        let nb = knn(&locations, 8).unwrap();
        let mut runs: Vec<f64> = (0..5)
            .map(|_| {
                let t = Instant::now();
                let phi = inverse_density(&locations, &nb).unwrap();
                std::hint::black_box(idiss_sample(&phi, n / 4, &mut rng).unwrap());
                t.elapsed().as_secs_f64()
            })
            .collect();
        runs.sort_by(f64::total_cmp);
        times.push(runs[2]);
    }
    let ratios = doubling_ratios(&times);
    outcome(
        ratios.iter().all(|r| (1.5..=3.0).contains(r)),
        format!("density + IDISS doubling ratios {:?} (in [1.5, 3.0])", ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>()),
    )
}

fn knn_query_growth() -> Outcome {
    let mut rng = Rng::new(70);
    let mut times = Vec::new();
    for n in [16_000, 64_000] {
        let coords: Vec<f64> = (0..n * 3).map(|_| rng.uniform()).collect();
        let locations = flexconv::Matrix::from_vec(n, 3, coords).unwrap();
        let t = Instant::now();
        let tree = KdTree::build(&locations).unwrap();
        std::hint::black_box(flexconv::knn_query(&tree, &locations, 8).unwrap());
        times.push(t.elapsed().as_secs_f64());
    }
    let ratio = times[1] / times[0];
    outcome(ratio < 10.0, format!("kNN time 64k / 16k = {ratio:.2} (< 10)"))
}

fn tuned_versus_naive() -> Outcome {
    match bench_scaling(&[100_000], 8, 16, 3, true, &mut Rng::new(80)) {
        Ok(rows) => {
            let r = &rows[0];
            let naive = r.naive_forward_s.unwrap();
            outcome(
                r.forward_s <= naive,
                format!("n=100000: tuned {:.4}s, naive {naive:.4}s", r.forward_s),
            )
        }
        Err(e) => outcome(false, format!("benchmark failed: {e}")),
    }
}

fn main() {
    let criteria: [(&str, &str, fn() -> Outcome); 13] = [
        ("1", "grid equivalence", grid_equivalence),
        ("2", "gradient exactness", gradient_exactness),
        ("3", "toy operator reproduction", toy_reproduction),
        ("4", "IDISS first-draw distribution", idiss_distribution),
        ("5", "linear runtime scaling", linear_scaling),
        ("6", "memory footprint arithmetic", memory_footprint),
        ("7", "parameter economy", parameter_economy),
        ("8", "desk-scale segmentation", desk_segmentation),
        ("9", "invariant suites", invariant_suites),
        ("extra", "toy loss decrease over 50 steps", toy_loss_decreases),
        ("extra", "density + sampling scaling", density_sampling_scaling),
        ("extra", "kNN query growth", knn_query_growth),
        ("extra", "tuned vs naive kernel", tuned_versus_naive),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (id, name, run) in criteria {
        if !only.is_empty() && !only.iter().any(|o| o == id || name.contains(o.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        failures += usize::from(!o.pass);
        println!(
            "criterion {id} [{}] {name}: {} ({:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failures > 0 {
        println!("{failures} acceptance check(s) failed");
        std::process::exit(1);
    }
}
