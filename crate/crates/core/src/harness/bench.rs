//! Timing of a single flex-conv layer across point counts.

use std::io::Write;
use std::time::Instant;

use crate::error::{EngineError, Result};
use crate::flexops::{flex_conv_backward, flex_conv_forward, flex_conv_forward_naive, param_count, FlexConvParams};
use crate::neighborhood::{knn, KdTree, NeighborIndex};
use crate::rng::Rng;
use crate::tensor::Matrix;

/// Storage width of reals and indices in a memory estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    /// 32-bit reals and 32-bit indices.
    F32,
    /// 64-bit reals and 64-bit indices, the layout this crate uses.
    F64,
}

impl Precision {
    pub fn bytes(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

/// Bytes of the buffers live during one flex-conv forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryEstimate {
    pub input: usize,
    pub locations: usize,
    pub output: usize,
    pub params: usize,
    pub neighbors: usize,
}

impl MemoryEstimate {
    pub fn total(&self) -> usize {
        self.input + self.locations + self.output + self.params + self.neighbors
    }
}

pub fn memory_estimate(n: usize, k: usize, c_in: usize, c_out: usize, d: usize, precision: Precision) -> MemoryEstimate {
    let b = precision.bytes();
    MemoryEstimate {
        input: n * c_in * b,
        locations: n * d * b,
        output: n * c_out * b,
        params: param_count(c_in, c_out, d) * b,
        neighbors: n * k * b,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub k: usize,
    pub channels: usize,
    pub threads: usize,
    pub forward_s: f64,
    pub backward_s: f64,
    pub naive_forward_s: Option<f64>,
    pub memory_bytes: usize,
}

pub const BENCH_CSV_HEADER: &str =
    "n,k,channels,threads,forward_median_s,backward_median_s,naive_forward_median_s,memory_bytes";

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

/// Uniform points in the unit cube, renumbered in kD-tree leaf order so
/// that neighbors sit close in memory.
pub fn bench_cloud(n: usize, d: usize, rng: &mut Rng) -> Result<Matrix> {
    let raw = Matrix::from_vec(n, d, (0..n * d).map(|_| rng.uniform()).collect())?;
    let tree = KdTree::build(&raw)?;
    let order: Vec<usize> = tree.leaves().flatten().copied().collect();
    raw.gather_rows(&order)
}

struct BenchCase {
    locations: Matrix,
    neighbors: NeighborIndex,
    features: Matrix,
    params: FlexConvParams,
    upstream: Matrix,
    fwd: Vec<f64>,
    bwd: Vec<f64>,
    naive: Vec<f64>,
}

/// Times forward and backward of one `C -> C` flex-conv layer in 3-D for each
/// size, reporting medians over `reps` runs. Repetitions cycle through all
/// sizes so slow phases of the machine hit every size alike. Neighborhood
/// construction is not timed. The naive kernel is timed only when
/// `with_naive` is set.
pub fn bench_scaling(
    sizes: &[usize],
    k: usize,
    channels: usize,
    reps: usize,
    with_naive: bool,
    rng: &mut Rng,
) -> Result<Vec<BenchRow>> {
    if sizes.is_empty() {
        return Err(EngineError::config("no benchmark sizes given"));
    }
    if reps == 0 || channels == 0 || k == 0 {
        return Err(EngineError::config("reps, channels and k must be positive"));
    }
    if let Some(&bad) = sizes.iter().find(|&&n| n < k) {
        return Err(EngineError::config(format!("size {bad} is smaller than k={k}")));
    }
    const DIM: usize = 3;
    let threads = rayon::current_num_threads();
    let len = channels * channels;
    let mut cases = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let locations = bench_cloud(n, DIM, rng)?;
        let neighbors = knn(&locations, k)?;
        let features = Matrix::from_vec(n, channels, (0..n * channels).map(|_| rng.uniform_range(-1.0, 1.0)).collect())?;
        let params = FlexConvParams::new(
            channels,
            channels,
            DIM,
            (0..len * DIM).map(|_| rng.uniform_range(-0.1, 0.1)).collect(),
            (0..len).map(|_| rng.uniform_range(-0.1, 0.1)).collect(),
        )?;
        cases.push(BenchCase {
            locations,
            neighbors,
            features,
            params,
            upstream: Matrix::filled(n, channels, 1.0),
            fwd: Vec::with_capacity(reps),
            bwd: Vec::with_capacity(reps),
            naive: Vec::new(),
        });
    }
    for _ in 0..reps {
        for c in &mut cases {
            let t = Instant::now();
            let out = flex_conv_forward(&c.features, &c.locations, &c.neighbors, &c.params)?;
            c.fwd.push(t.elapsed().as_secs_f64());
            std::hint::black_box(out);
            let t = Instant::now();
            let g = flex_conv_backward(&c.upstream, &c.features, &c.locations, &c.neighbors, &c.params)?;
            c.bwd.push(t.elapsed().as_secs_f64());
            std::hint::black_box(g);
            if with_naive {
                let t = Instant::now();
                let out = flex_conv_forward_naive(&c.features, &c.locations, &c.neighbors, &c.params)?;
                c.naive.push(t.elapsed().as_secs_f64());
                std::hint::black_box(out);
            }
        }
    }
    Ok(sizes
        .iter()
        .zip(cases)
        .map(|(&n, c)| BenchRow {
            n,
            k,
            channels,
            threads,
            forward_s: median(c.fwd),
            backward_s: median(c.bwd),
            naive_forward_s: with_naive.then(|| median(c.naive)),
            memory_bytes: memory_estimate(n, k, channels, channels, DIM, Precision::F64).total(),
        })
        .collect())
}

/// Writes [`BENCH_CSV_HEADER`] and one line per row; a missing naive timing
/// is an empty field.
pub fn write_bench_csv<W: Write>(mut out: W, rows: &[BenchRow]) -> Result<()> {
    writeln!(out, "{BENCH_CSV_HEADER}")?;
    for r in rows {
        let naive = r.naive_forward_s.map(|v| format!("{v:.6e}")).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{:.6e},{:.6e},{},{}",
            r.n, r.k, r.channels, r.threads, r.forward_s, r.backward_s, naive, r.memory_bytes
        )?;
    }
    Ok(())
}
