//! Reference oracles, toy tasks, synthetic data, metrics, benchmarks and
//! training loops.

mod bench;
mod metrics;
mod oracle;
mod synth;
mod toy;
mod train;

pub use bench::{
    bench_cloud, bench_scaling, memory_estimate, write_bench_csv, BenchRow, MemoryEstimate, Precision,
    BENCH_CSV_HEADER,
};
pub use metrics::{evaluate, evaluate_predictions, write_metrics_csv, Metrics};
pub use oracle::{dense_conv2d, kernel_from_flex, DenseConvOracle};
pub use synth::{
    chair_like, gen_synthetic_seg, gen_two_class_clouds, normalize_locations, LabeledCloud, Primitive,
    PrimitiveKind, Scene,
};
pub use toy::{run_toy_regression, ToyKind, ToyResult, ToyTask};
pub use train::{batch_gradient, predict, prepare_sample, train, Sample};
