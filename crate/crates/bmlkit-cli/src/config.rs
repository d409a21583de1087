//! Run configuration: one JSON file drives phantom generation, training,
//! detection, and evaluation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use bmlkit::detect::DetectConfig;
use bmlkit::ffc::{Arch, TrainConfig};
use bmlkit::phantom::{DatasetOptions, PhantomConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Global seed; per-stage seeds derive from it.
    pub seed: u64,
    /// Output directory; every command writes under it.
    pub out_dir: PathBuf,
    pub phantom: PhantomSection,
    pub train: TrainSection,
    pub detect: DetectSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out_dir: PathBuf::from("runs/default"),
            phantom: PhantomSection::default(),
            train: TrainSection::default(),
            detect: DetectSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PhantomSection {
    pub config: PhantomConfig,
    pub dataset: DatasetOptions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub arch: Arch,
    pub config: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            arch: Arch::default(),
            config: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectSection {
    /// "classical" or "trained".
    pub inpainter: String,
    /// Checkpoint path for the trained inpainter; defaults to the one
    /// `train` writes under the output directory.
    pub checkpoint: Option<PathBuf>,
    /// Post-processing overrides; when absent, radii scale with resolution.
    pub config: Option<DetectConfig>,
    pub classical_tolerance: f64,
    pub classical_max_iters: usize,
}

impl Default for DetectSection {
    fn default() -> Self {
        Self {
            inpainter: "trained".into(),
            checkpoint: None,
            config: None,
            classical_tolerance: 1e-6,
            classical_max_iters: 10_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub resolutions: Vec<usize>,
    /// "bone" (default) or "full".
    pub region: String,
    pub size_groups: usize,
    /// Split evaluated by `eval`.
    pub split: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            resolutions: vec![128],
            region: "bone".into(),
            size_groups: 5,
            split: "test".into(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let cfg: RunConfig = serde_json::from_slice(&bytes)
            .map_err(|e| anyhow::anyhow!("cannot parse config {}: {e}", path.display()))?;
        Ok(cfg)
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.out_dir.join("dataset")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dataset_dir().join("manifest.json")
    }

    pub fn checkpoint_path(&self, resolution: usize) -> PathBuf {
        match &self.detect.checkpoint {
            Some(p) => p.clone(),
            None => self.out_dir.join(format!("checkpoints/model_{resolution}.ckpt")),
        }
    }

    pub fn region_full(&self) -> anyhow::Result<bool> {
        match self.eval.region.as_str() {
            "bone" => Ok(false),
            "full" => Ok(true),
            other => anyhow::bail!("eval.region must be \"bone\" or \"full\", got {other:?}"),
        }
    }
}
