//! Run configuration: a flat TOML table with a fixed schema.

use std::path::{Path, PathBuf};

use flexconv::harness::ToyKind;
use flexconv::network::LrSchedule;
use flexconv::sampling::SamplingMode;
use flexconv::{EngineError, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    Idiss,
    Random,
}

impl From<Sampling> for SamplingMode {
    fn from(s: Sampling) -> Self {
        match s {
            Sampling::Idiss => SamplingMode::Idiss,
            Sampling::Random => SamplingMode::Random,
        }
    }
}

/// Every key is optional except `task`; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: ToyKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::threads")]
    pub threads: usize,

    #[serde(default = "defaults::stages")]
    pub stages: usize,
    #[serde(default = "defaults::base_channels")]
    pub base_channels: usize,
    #[serde(default = "defaults::k")]
    pub k: usize,
    #[serde(default = "defaults::factor")]
    pub factor: usize,
    #[serde(default = "defaults::d")]
    pub d: usize,
    #[serde(default = "defaults::sampling")]
    pub sampling: Sampling,

    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    #[serde(default = "defaults::steps")]
    pub steps: usize,
    #[serde(default = "defaults::batch")]
    pub batch: usize,
    #[serde(default = "defaults::log_every")]
    pub log_every: usize,

    #[serde(default = "defaults::n_points")]
    pub n_points: usize,
    #[serde(default = "defaults::n_scenes")]
    pub n_scenes: usize,
    #[serde(default)]
    pub held_out: usize,
    #[serde(default = "defaults::image_size")]
    pub image_size: usize,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(default = "defaults::out_dir")]
    pub out_dir: PathBuf,

    #[serde(default = "defaults::bench_sizes")]
    pub bench_sizes: Vec<usize>,
    #[serde(default = "defaults::bench_channels")]
    pub bench_channels: usize,
    #[serde(default = "defaults::bench_reps")]
    pub bench_reps: usize,
    #[serde(default = "defaults::bench_naive")]
    pub bench_naive: bool,
}

mod defaults {
    use std::path::PathBuf;

    use super::Sampling;

    pub fn threads() -> usize {
        1
    }
    pub fn stages() -> usize {
        2
    }
    pub fn base_channels() -> usize {
        8
    }
    pub fn k() -> usize {
        8
    }
    pub fn factor() -> usize {
        4
    }
    pub fn d() -> usize {
        3
    }
    pub fn sampling() -> Sampling {
        Sampling::Idiss
    }
    pub fn lr() -> f64 {
        flexconv::network::DEFAULT_LR
    }
    pub fn steps() -> usize {
        1000
    }
    pub fn batch() -> usize {
        1
    }
    pub fn log_every() -> usize {
        10
    }
    pub fn n_points() -> usize {
        4096
    }
    pub fn n_scenes() -> usize {
        20
    }
    pub fn image_size() -> usize {
        64
    }
    pub fn out_dir() -> PathBuf {
        PathBuf::from("out")
    }
    pub fn bench_sizes() -> Vec<usize> {
        vec![100_000, 200_000, 400_000, 800_000]
    }
    pub fn bench_channels() -> usize {
        16
    }
    pub fn bench_reps() -> usize {
        3
    }
    pub fn bench_naive() -> bool {
        true
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| EngineError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EngineError::io(format!("reading config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("threads", self.threads),
            ("stages", self.stages),
            ("base_channels", self.base_channels),
            ("k", self.k),
            ("d", self.d),
            ("batch", self.batch),
            ("log_every", self.log_every),
            ("bench_channels", self.bench_channels),
            ("bench_reps", self.bench_reps),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(EngineError::config(format!("{name} must be positive")));
        }
        if self.factor < 2 {
            return Err(EngineError::config("factor must be at least 2"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(EngineError::config(format!("lr {} must be positive", self.lr)));
        }
        Ok(())
    }

    /// The resolved configuration as TOML, as echoed into output directories
    /// and checkpoints.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
