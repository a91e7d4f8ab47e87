//! Inverse-density importance subsampling and resolution hierarchies.
//!
//! The density proxy of a point is the sum of distances to its neighbors.
//! Sampling without replacement uses an exponential race: point `i` gets the
//! key `E_i / phi_i` with `E_i ~ Exp(1)` and the `m` smallest keys win. The
//! first winner is distributed exactly as `phi / sum(phi)`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::cloud::{read_flexcloud, write_flexcloud, PointCloud};
use crate::error::{EngineError, Result};
use crate::neighborhood::{knn, read_flexknn, write_flexknn, NeighborIndex};
use crate::rng::Rng;
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate {
    pub phi: Vec<f64>,
}

/// Indices into the parent level, strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionMap {
    selected: Vec<usize>,
}

impl SelectionMap {
    /// Sorts the indices and checks they are distinct and below `parent_len`.
    pub fn new(mut selected: Vec<usize>, parent_len: usize) -> Result<Self> {
        selected.sort_unstable();
        if let Some(w) = selected.windows(2).find(|w| w[0] == w[1]) {
            return Err(EngineError::index(format!("index {} selected twice", w[0])));
        }
        if let Some(&last) = selected.last() {
            if last >= parent_len {
                return Err(EngineError::index(format!(
                    "selected index {last} out of range for {parent_len} points"
                )));
            }
        }
        Ok(Self { selected })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            selected: (0..n).collect(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.selected
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    Idiss,
    Random,
}

impl std::str::FromStr for SamplingMode {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "idiss" => Ok(Self::Idiss),
            "random" => Ok(Self::Random),
            other => Err(EngineError::config(format!("unknown sampling mode {other:?}"))),
        }
    }
}

/// `phi[i] = sum_j |l_i - l_j|` over row `i` of `neighbors`.
pub fn inverse_density(locations: &Matrix, neighbors: &NeighborIndex) -> Result<DensityEstimate> {
    if neighbors.len() != locations.rows() {
        return Err(EngineError::shape(format!(
            "neighbor table has {} rows for {} points",
            neighbors.len(),
            locations.rows()
        )));
    }
    let phi = neighbors
        .rows()
        .enumerate()
        .map(|(i, row)| {
            let li = locations.row(i);
            row.iter()
                .map(|&j| crate::neighborhood::squared_distance(li, locations.row(j)).sqrt())
                .sum()
        })
        .collect();
    Ok(DensityEstimate { phi })
}

fn check_m(n: usize, m: usize) -> Result<()> {
    if m == 0 || m > n {
        return Err(EngineError::config(format!(
            "cannot select {m} of {n} points"
        )));
    }
    Ok(())
}

/// Draws `m` distinct indices, the first with probability `phi_i / sum(phi)`.
/// Zero-weight points are only taken once every positive-weight point is.
/// An all-zero `phi` falls back to uniform sampling.
pub fn idiss_sample(density: &DensityEstimate, m: usize, rng: &mut Rng) -> Result<SelectionMap> {
    let phi = &density.phi;
    let n = phi.len();
    check_m(n, m)?;
    if let Some(bad) = phi.iter().find(|p| !p.is_finite()) {
        return Err(EngineError::non_finite(format!("density value {bad}")));
    }
    if phi.iter().any(|&p| p < 0.0) {
        return Err(EngineError::config("density values must be non-negative"));
    }
    if phi.iter().all(|&p| p == 0.0) {
        warn!("all {n} density values are zero; falling back to uniform sampling");
        return random_sample(n, m, rng);
    }
    if m == n {
        return Ok(SelectionMap::identity(n));
    }
    let uniforms = rng.counter_uniforms(n);
    let mut keys: Vec<(f64, f64, usize)> = uniforms
        .iter()
        .zip(phi)
        .enumerate()
        .map(|(i, (&u, &p))| {
            let e = -(1.0 - u).ln();
            // +inf for zero weight; ties there are broken by the raw draw
            (e / p, e, i)
        })
        .collect();
    let order = |a: &(f64, f64, usize), b: &(f64, f64, usize)| {
        a.0.total_cmp(&b.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.cmp(&b.2))
    };
    keys.select_nth_unstable_by(m - 1, order);
    let selected = keys[..m].iter().map(|k| k.2).collect();
    SelectionMap::new(selected, n)
}

/// Uniform sample of `m` distinct indices from `0..n`.
pub fn random_sample(n: usize, m: usize, rng: &mut Rng) -> Result<SelectionMap> {
    check_m(n, m)?;
    let selected = rand::seq::index::sample(rng, n, m).into_vec();
    SelectionMap::new(selected, n)
}

/// One resolution of a [`ResolutionHierarchy`].
#[derive(Debug, Clone, PartialEq)]
pub struct Level {
    pub cloud: PointCloud,
    pub neighbors: NeighborIndex,
    /// Rows of the previous level kept at this level; `None` for level 0.
    pub selection: Option<SelectionMap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolutionHierarchy {
    pub levels: Vec<Level>,
}

impl ResolutionHierarchy {
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.cloud.len()).collect()
    }

    pub fn level(&self, t: usize) -> &Level {
        &self.levels[t]
    }

    /// Maps level `t` point indices back to level 0 indices.
    pub fn origin_indices(&self, t: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.levels[t].cloud.len()).collect();
        for level in self.levels[1..=t].iter().rev() {
            let sel = level.selection.as_ref().expect("levels above 0 carry a selection");
            for i in idx.iter_mut() {
                *i = sel.indices()[*i];
            }
        }
        idx
    }
}

/// Size of level `t` for an `n`-point input.
pub fn level_size(n: usize, factor: usize, t: usize) -> usize {
    let div = factor.pow(t as u32);
    n.div_ceil(div)
}

/// Levels `0..=depth`, level `t` holding `ceil(n / factor^t)` points drawn
/// from level `t - 1`. Each level gets its own kNN table with
/// `min(k, level size)` neighbors.
pub fn build_hierarchy(
    cloud: &PointCloud,
    k: usize,
    factor: usize,
    depth: usize,
    rng: &mut Rng,
    mode: SamplingMode,
) -> Result<ResolutionHierarchy> {
    crate::cloud::validate_cloud(cloud)?;
    if factor < 2 {
        return Err(EngineError::config(format!("subsampling factor {factor} must be >= 2")));
    }
    if depth == 0 {
        return Err(EngineError::config("hierarchy depth must be >= 1"));
    }
    if k == 0 {
        return Err(EngineError::config("neighborhood size must be positive"));
    }
    let n = cloud.len();
    let needed = factor
        .checked_pow(depth as u32)
        .ok_or_else(|| EngineError::config("factor^depth overflows"))?;
    if n < needed {
        return Err(EngineError::config(format!(
            "{n} points cannot support depth {depth} at factor {factor}"
        )));
    }
    let mut levels = Vec::with_capacity(depth + 1);
    let neighbors = knn(&cloud.locations, k.min(n))?;
    levels.push(Level {
        cloud: cloud.clone(),
        neighbors,
        selection: None,
    });
    for t in 1..=depth {
        let parent: &Level = &levels[t - 1];
        let m = level_size(n, factor, t);
        let selection = match mode {
            SamplingMode::Idiss => {
                let phi = inverse_density(&parent.cloud.locations, &parent.neighbors)?;
                idiss_sample(&phi, m, rng)?
            }
            SamplingMode::Random => random_sample(parent.cloud.len(), m, rng)?,
        };
        let coarse = parent.cloud.select(selection.indices())?;
        let neighbors = knn(&coarse.locations, k.min(m))?;
        levels.push(Level {
            cloud: coarse,
            neighbors,
            selection: Some(selection),
        });
    }
    Ok(ResolutionHierarchy { levels })
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    levels: Vec<ManifestLevel>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestLevel {
    level: usize,
    size: usize,
    k: usize,
    cloud: String,
    neighbors: String,
    selection: Option<Vec<usize>>,
}

const MANIFEST: &str = "manifest.json";

/// Writes `level<t>.flexcloud`, `level<t>.flexknn` and `manifest.json` into
/// `dir`. The manifest lists, per level, its size, neighborhood size, the two
/// file names and the selection into the previous level (`null` at level 0).
pub fn dump_hierarchy(hierarchy: &ResolutionHierarchy, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut levels = Vec::new();
    for (t, level) in hierarchy.levels.iter().enumerate() {
        let cloud_name = format!("level{t}.flexcloud");
        let knn_name = format!("level{t}.flexknn");
        write_flexcloud(File::create(dir.join(&cloud_name))?, &level.cloud, None)?;
        write_flexknn(File::create(dir.join(&knn_name))?, &level.neighbors)?;
        levels.push(ManifestLevel {
            level: t,
            size: level.cloud.len(),
            k: level.neighbors.k(),
            cloud: cloud_name,
            neighbors: knn_name,
            selection: level.selection.as_ref().map(|s| s.indices().to_vec()),
        });
    }
    let manifest = Manifest {
        format: "flexhierarchy".into(),
        version: 1,
        levels,
    };
    let file = BufWriter::new(File::create(dir.join(MANIFEST))?);
    serde_json::to_writer_pretty(file, &manifest)
        .map_err(|e| EngineError::io(e.to_string()))?;
    Ok(())
}

pub fn load_hierarchy(dir: &Path) -> Result<ResolutionHierarchy> {
    let file = File::open(dir.join(MANIFEST))?;
    let manifest: Manifest = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| EngineError::config(format!("bad hierarchy manifest: {e}")))?;
    if manifest.format != "flexhierarchy" || manifest.version != 1 {
        return Err(EngineError::config("unsupported hierarchy manifest"));
    }
    let mut levels: Vec<Level> = Vec::new();
    for entry in manifest.levels {
        let (cloud, _) = read_flexcloud(BufReader::new(File::open(dir.join(&entry.cloud))?))?;
        let neighbors = read_flexknn(BufReader::new(File::open(dir.join(&entry.neighbors))?))?;
        if cloud.len() != entry.size || neighbors.len() != entry.size || neighbors.k() != entry.k {
            return Err(EngineError::config(format!(
                "level {} files disagree with the manifest",
                entry.level
            )));
        }
        let selection = match (entry.selection, levels.last()) {
            (None, None) => None,
            (Some(sel), Some(parent)) => Some(SelectionMap::new(sel, parent.cloud.len())?),
            _ => return Err(EngineError::config("selection must be absent exactly at level 0")),
        };
        levels.push(Level {
            cloud,
            neighbors,
            selection,
        });
    }
    if levels.is_empty() {
        return Err(EngineError::empty("hierarchy manifest lists no levels"));
    }
    Ok(ResolutionHierarchy { levels })
}
