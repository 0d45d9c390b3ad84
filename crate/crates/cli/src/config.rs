use std::path::{Path, PathBuf};

use anyhow::Context;
use mvtn::dataio::{load_dataset, synthetic_dataset, Dataset, SyntheticSpec};
use mvtn::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::UsageError;

/// Everything a run needs. Fields missing from the config file take their
/// defaults; command-line flags override both.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset manifest. When unset the synthetic set below is generated.
    pub manifest: Option<PathBuf>,
    /// Directory for cached point clouds of manifest shapes.
    pub cache: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
    /// Seed of the synthetic generator.
    pub data_seed: u64,
    /// Output directory. Not echoed into `resolved_config.json` so that
    /// runs in different directories produce identical artifacts.
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            manifest: None,
            cache: None,
            synthetic: SyntheticSpec::seven_class(),
            data_seed: 0,
            out: None,
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| UsageError(format!("bad config {}: {e}", path.display())).into())
    }

    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            Some(p) => RunConfig::from_file(p),
            None => Ok(RunConfig::default()),
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.train.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(())
    }

    /// Full dataset, both splits.
    pub fn dataset(&self) -> anyhow::Result<Dataset> {
        let points = self.train.points;
        match &self.manifest {
            Some(m) => load_dataset(m, points, self.cache.as_deref()).with_context(|| format!("loading {}", m.display())),
            None => {
                let spec = SyntheticSpec { points, ..self.synthetic.clone() };
                Ok(synthetic_dataset(&spec, self.data_seed)?)
            }
        }
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Saved alongside the checkpoint so a run can be reloaded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub classes: usize,
    pub config: TrainConfig,
}

pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const MODEL_FILE: &str = "model.json";
pub const CHECKPOINT: &str = "checkpoint.bin";
