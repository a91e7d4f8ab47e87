//! Subcommand implementations. Every command writes its resolved config to
//! `config.toml` in the output directory before doing any work.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use flexconv::cloud::{read_flexcloud, write_flexcloud};
use flexconv::harness::{
    bench_scaling, dense_conv2d, evaluate_predictions, gen_synthetic_seg, gen_two_class_clouds, kernel_from_flex,
    predict, prepare_sample, run_toy_regression, train, write_bench_csv, write_metrics_csv, LabeledCloud, Metrics,
    PrimitiveKind, Sample, ToyKind, ToyTask,
};
use flexconv::network::{build_classifier, build_segnet, AdamState, Checkpoint, LayerGraph};
use flexconv::{image_to_cloud, EngineError, PointCloud, Result, Rng};
use log::info;

use crate::config::RunConfig;

const SEG_CLASSES: [PrimitiveKind; 3] = [PrimitiveKind::Plane, PrimitiveKind::Sphere, PrimitiveKind::Cuboid];

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).map_err(|e| EngineError::io(format!("creating {}: {e}", path.display())))?;
    Ok(BufWriter::new(f))
}

fn prepare_out(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| EngineError::io(format!("creating {}: {e}", cfg.out_dir.display())))?;
    fs::write(cfg.out_dir.join("config.toml"), cfg.to_toml())?;
    Ok(())
}

fn is_image_task(kind: ToyKind) -> bool {
    kind.flex_target().is_some()
}

fn toy_task(cfg: &RunConfig) -> ToyTask {
    ToyTask::new(cfg.task, cfg.image_size, cfg.seed)
}

/// Labeled clouds of the configured task, generated from the seed.
fn generate(cfg: &RunConfig) -> Result<Vec<LabeledCloud>> {
    let rng = Rng::new(cfg.seed);
    match cfg.task {
        ToyKind::SyntheticShapesSeg => Ok(gen_synthetic_seg(cfg.n_points, cfg.n_scenes, &SEG_CLASSES, &mut rng.derive(1))?
            .into_iter()
            .map(|s| s.data)
            .collect()),
        ToyKind::TwoClassClouds => gen_two_class_clouds(cfg.n_points, cfg.n_scenes, &mut rng.derive(1)),
        kind => Err(EngineError::config(format!("{kind:?} has no point-cloud dataset"))),
    }
}

pub fn cmd_gen(cfg: &RunConfig) -> Result<()> {
    prepare_out(cfg)?;
    if cfg.n_scenes == 0 {
        return Err(EngineError::config("n_scenes must be positive"));
    }
    if is_image_task(cfg.task) {
        let task = toy_task(cfg);
        let (theta, b) = cfg.task.flex_target().expect("image task");
        let oracle = kernel_from_flex(theta, b);
        for i in 0..cfg.n_scenes {
            let img = task.image(i as u64)?;
            let target = dense_conv2d(&img, &oracle)?;
            write_flexcloud(create(&cfg.out_dir.join(format!("image{i:04}.flexcloud")))?, &image_to_cloud(&img)?, None)?;
            write_flexcloud(create(&cfg.out_dir.join(format!("target{i:04}.flexcloud")))?, &image_to_cloud(&target)?, None)?;
        }
    } else {
        for (i, item) in generate(cfg)?.iter().enumerate() {
            let labels = per_point_labels(item);
            write_flexcloud(create(&cfg.out_dir.join(format!("scene{i:04}.flexcloud")))?, &item.cloud, Some(&labels))?;
        }
    }
    info!("wrote {} samples to {}", cfg.n_scenes, cfg.out_dir.display());
    Ok(())
}

/// Classification samples carry one label; files store it on every point.
fn per_point_labels(item: &LabeledCloud) -> Vec<usize> {
    if item.labels.len() == item.cloud.len() {
        item.labels.clone()
    } else {
        vec![item.labels[0]; item.cloud.len()]
    }
}

fn read_labeled(path: &Path, classification: bool) -> Result<LabeledCloud> {
    let f = File::open(path).map_err(|e| EngineError::io(format!("opening {}: {e}", path.display())))?;
    let (cloud, labels) = read_flexcloud(BufReader::new(f))?;
    let labels = labels.ok_or_else(|| EngineError::config(format!("{} has no labels", path.display())))?;
    let labels = if classification { vec![labels[0]] } else { labels };
    Ok(LabeledCloud { cloud, labels })
}

/// `*.flexcloud` files of a dataset directory in name order.
fn dataset_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| EngineError::io(format!("reading dataset {}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "flexcloud") {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(EngineError::empty(format!("no .flexcloud files in {}", dir.display())));
    }
    Ok(files)
}

fn load_dataset(cfg: &RunConfig) -> Result<Vec<LabeledCloud>> {
    let classification = cfg.task == ToyKind::TwoClassClouds;
    match &cfg.dataset {
        Some(dir) => dataset_files(dir)?.iter().map(|p| read_labeled(p, classification)).collect(),
        None => generate(cfg),
    }
}

fn build_graph(cfg: &RunConfig, n_f: usize) -> Result<LayerGraph> {
    match cfg.task {
        ToyKind::SyntheticShapesSeg => {
            build_segnet(cfg.d, n_f, SEG_CLASSES.len(), cfg.stages, cfg.base_channels, cfg.k, cfg.factor)
        }
        ToyKind::TwoClassClouds => build_classifier(cfg.d, n_f, 2, cfg.stages, cfg.base_channels, cfg.k),
        kind => Err(EngineError::config(format!("{kind:?} does not use a network"))),
    }
}

fn prepare_all(cfg: &RunConfig, data: &[LabeledCloud], tag: u64) -> Result<Vec<Sample>> {
    let mut rng = Rng::new(cfg.seed).derive(tag);
    data.iter()
        .map(|d| {
            if d.cloud.dim() != cfg.d {
                return Err(EngineError::shape(format!("cloud is {}-D, config says d={}", d.cloud.dim(), cfg.d)));
            }
            prepare_sample(d, cfg.k, cfg.factor, cfg.stages, cfg.sampling.into(), &mut rng)
        })
        .collect()
}

fn evaluate_samples(graph: &mut LayerGraph, samples: &[Sample], classes: usize) -> Result<Metrics> {
    let mut predictions = Vec::new();
    let mut labels = Vec::new();
    for s in samples {
        predictions.extend(predict(graph, s)?);
        labels.extend_from_slice(&s.labels);
    }
    evaluate_predictions(&predictions, &labels, classes)
}

fn class_count(cfg: &RunConfig) -> usize {
    if cfg.task == ToyKind::TwoClassClouds {
        2
    } else {
        SEG_CLASSES.len()
    }
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    prepare_out(cfg)?;
    if let Some(dir) = &cfg.dataset {
        if !dir.exists() {
            return Err(EngineError::io(format!("dataset {} does not exist", dir.display())));
        }
    }
    if is_image_task(cfg.task) {
        return train_toy(cfg);
    }
    let data = load_dataset(cfg)?;
    if cfg.held_out >= data.len() {
        return Err(EngineError::config(format!(
            "held_out={} leaves no training samples out of {}",
            cfg.held_out,
            data.len()
        )));
    }
    let samples = prepare_all(cfg, &data, 2)?;
    let (train_set, test_set) = samples.split_at(samples.len() - cfg.held_out);
    let mut graph = build_graph(cfg, train_set[0].features.cols())?;
    let rng = Rng::new(cfg.seed);
    graph.initialize(&train_set[0].hierarchy, &mut rng.derive(3))?;
    let mut adam = AdamState::new(graph.param_count(), cfg.lr);

    let mut log = create(&cfg.out_dir.join("loss.csv"))?;
    writeln!(log, "step,loss")?;
    let mut io_error = None;
    let start = Instant::now();
    train(&mut graph, &mut adam, train_set, cfg.steps, cfg.batch, cfg.lr_schedule, &mut rng.derive(4), |step, loss| {
        if step % cfg.log_every == 0 || step + 1 == cfg.steps {
            info!("step {step} loss {loss:.6}");
            if let Err(e) = writeln!(log, "{step},{loss:?}") {
                io_error.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = io_error {
        return Err(e.into());
    }
    log.flush()?;
    info!("trained {} steps in {:.1}s", cfg.steps, start.elapsed().as_secs_f64());

    let classes = class_count(cfg);
    let train_metrics = evaluate_samples(&mut graph, train_set, classes)?;
    write_metrics_csv(create(&cfg.out_dir.join("train_metrics.csv"))?, &train_metrics)?;
    println!("train accuracy {:.4} miou {:.4}", train_metrics.accuracy, train_metrics.miou);
    if !test_set.is_empty() {
        let m = evaluate_samples(&mut graph, test_set, classes)?;
        write_metrics_csv(create(&cfg.out_dir.join("metrics.csv"))?, &m)?;
        println!("held-out accuracy {:.4} miou {:.4}", m.accuracy, m.miou);
    }

    let ckpt = Checkpoint {
        config: cfg.to_toml(),
        architecture: graph.description().to_string(),
        params: graph.params.values.clone(),
        adam,
    };
    let path = cfg.checkpoint.clone().unwrap_or_else(|| cfg.out_dir.join("model.ckpt"));
    ckpt.write(create(&path)?)?;
    info!("checkpoint written to {}", path.display());
    Ok(())
}

fn train_toy(cfg: &RunConfig) -> Result<()> {
    let result = run_toy_regression(&toy_task(cfg), cfg.steps, cfg.lr, &mut Rng::new(cfg.seed).derive(3))?;
    let mut log = create(&cfg.out_dir.join("loss.csv"))?;
    writeln!(log, "step,loss")?;
    for (step, loss) in result.losses.iter().enumerate() {
        if step % cfg.log_every == 0 || step + 1 == result.losses.len() {
            writeln!(log, "{step},{loss:?}")?;
        }
    }
    writeln!(log, "final,{:?}", result.final_mse)?;
    log.flush()?;
    let mut m = create(&cfg.out_dir.join("metrics.csv"))?;
    writeln!(m, "metric,value")?;
    writeln!(m, "initial_mse,{:?}", result.initial_mse)?;
    writeln!(m, "final_mse,{:?}", result.final_mse)?;
    writeln!(m, "theta_0,{:?}", result.theta[0])?;
    writeln!(m, "theta_1,{:?}", result.theta[1])?;
    writeln!(m, "theta_b,{:?}", result.theta_b)?;
    m.flush()?;
    println!(
        "final MSE {:e} theta ({:.6}, {:.6}) theta_b {:.6}",
        result.final_mse, result.theta[0], result.theta[1], result.theta_b
    );
    Ok(())
}

/// Loads the checkpoint and rebuilds the network the config describes,
/// rejecting checkpoints written for a different architecture.
fn load_model(cfg: &RunConfig, n_f: usize) -> Result<LayerGraph> {
    let path = cfg
        .checkpoint
        .clone()
        .ok_or_else(|| EngineError::config("checkpoint path is not set"))?;
    let f = File::open(&path).map_err(|e| EngineError::io(format!("opening {}: {e}", path.display())))?;
    let ckpt = Checkpoint::read(BufReader::new(f))?;
    let mut graph = build_graph(cfg, n_f)?;
    if ckpt.architecture != graph.description() {
        return Err(EngineError::config(format!(
            "checkpoint holds `{}`, config describes `{}`",
            ckpt.architecture,
            graph.description()
        )));
    }
    if ckpt.params.len() != graph.param_count() {
        return Err(EngineError::config("checkpoint parameter count does not match the network"));
    }
    graph.params.values = ckpt.params;
    Ok(graph)
}

fn read_input(cfg: &RunConfig) -> Result<PointCloud> {
    let path = cfg.input.as_ref().ok_or_else(|| EngineError::config("input path is not set"))?;
    let f = File::open(path).map_err(|e| EngineError::io(format!("opening {}: {e}", path.display())))?;
    Ok(read_flexcloud(BufReader::new(f))?.0)
}

pub fn cmd_infer(cfg: &RunConfig) -> Result<()> {
    prepare_out(cfg)?;
    let cloud = read_input(cfg)?;
    let mut graph = load_model(cfg, cloud.channels())?;
    let start = Instant::now();
    let item = LabeledCloud {
        labels: vec![0; cloud.len()],
        cloud: cloud.clone(),
    };
    let sample = prepare_all(cfg, std::slice::from_ref(&item), 5)?.remove(0);
    let prepared = start.elapsed();
    let predicted = predict(&mut graph, &sample)?;
    let total = start.elapsed();
    let labels = if predicted.len() == cloud.len() {
        predicted
    } else {
        vec![predicted[0]; cloud.len()]
    };
    write_flexcloud(create(&cfg.out_dir.join("prediction.flexcloud"))?, &cloud, Some(&labels))?;
    println!(
        "inferred {} points: hierarchy {:.3}s, forward {:.3}s",
        cloud.len(),
        prepared.as_secs_f64(),
        (total - prepared).as_secs_f64()
    );
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    prepare_out(cfg)?;
    let classification = cfg.task == ToyKind::TwoClassClouds;
    let data = match &cfg.input {
        Some(path) => vec![read_labeled(path, classification)?],
        None => load_dataset(cfg)?,
    };
    let samples = prepare_all(cfg, &data, 5)?;
    let mut graph = load_model(cfg, samples[0].features.cols())?;
    let m = evaluate_samples(&mut graph, &samples, class_count(cfg))?;
    write_metrics_csv(create(&cfg.out_dir.join("metrics.csv"))?, &m)?;
    println!("accuracy {:.4} miou {:.4}", m.accuracy, m.miou);
    Ok(())
}

pub fn cmd_bench(cfg: &RunConfig) -> Result<()> {
    prepare_out(cfg)?;
    let rows = bench_scaling(
        &cfg.bench_sizes,
        cfg.k,
        cfg.bench_channels,
        cfg.bench_reps,
        cfg.bench_naive,
        &mut Rng::new(cfg.seed),
    )?;
    let mut out = create(&cfg.out_dir.join("bench.csv"))?;
    write_bench_csv(&mut out, &rows)?;
    out.flush()?;
    for r in &rows {
        println!(
            "n={} forward {:.4}s backward {:.4}s naive {}",
            r.n,
            r.forward_s,
            r.backward_s,
            r.naive_forward_s.map(|t| format!("{t:.4}s")).unwrap_or_else(|| "-".into())
        );
    }
    Ok(())
}

