use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::ModelConfig;
use crate::rigdata::sample::AugmentConfig;
use crate::rigdata::skeleton::TEMPLATE_JOINT_COUNT;

/// Metric that drives the plateau scheduler.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlateauMetric {
    #[default]
    ValMpjpe,
    TrainLoss,
}

fn default_epochs() -> usize {
    100
}
fn default_batch_size() -> usize {
    1
}
fn default_lr() -> f64 {
    1e-3
}
fn default_weight_decay() -> f64 {
    1e-4
}
fn default_patience() -> usize {
    8
}
fn default_decay() -> f64 {
    0.75
}
fn default_true() -> bool {
    true
}
fn default_k() -> usize {
    80
}

/// Training run settings, read from a flat TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Conditioned dataset root.
    pub dataset: PathBuf,
    /// Checkpoints and the log go here.
    pub output_dir: PathBuf,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub initial_lr: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default)]
    pub warmup: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub augmentation: bool,
    #[serde(default = "default_k")]
    pub k_neighbors: usize,
    #[serde(default = "default_true")]
    pub use_normals: bool,
    #[serde(default)]
    pub plateau_metric: PlateauMetric,
}

impl TrainConfig {
    pub fn new(dataset: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        TrainConfig {
            dataset: dataset.into(),
            output_dir: output_dir.into(),
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            initial_lr: default_lr(),
            weight_decay: default_weight_decay(),
            patience: default_patience(),
            decay: default_decay(),
            warmup: 0,
            seed: 0,
            augmentation: true,
            k_neighbors: default_k(),
            use_normals: true,
            plateau_metric: PlateauMetric::ValMpjpe,
        }
    }

    /// Parses TOML. Relative paths are taken relative to `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut config: TrainConfig = toml::from_str(text).map_err(|e| CoreError::Config(e.to_string()))?;
        if config.dataset.is_relative() {
            config.dataset = base.join(&config.dataset);
        }
        if config.output_dir.is_relative() {
            config.output_dir = base.join(&config.output_dir);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        TrainConfig::from_toml(&text, base).map_err(|e| match e {
            CoreError::Config(m) => CoreError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(CoreError::Config(m.to_string()));
        if self.batch_size != 1 {
            return fail("batch_size must be 1: clouds have different point counts");
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return fail("initial_lr must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail("weight_decay must be non-negative");
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return fail("decay must lie in (0, 1)");
        }
        self.model_config(TEMPLATE_JOINT_COUNT).validate()
    }

    pub fn model_config(&self, joint_count: usize) -> ModelConfig {
        ModelConfig {
            k_neighbors: self.k_neighbors,
            use_normals: self.use_normals,
            joint_count,
            ..ModelConfig::default()
        }
    }

    pub fn augment_config(&self) -> Option<AugmentConfig> {
        self.augmentation.then(AugmentConfig::default)
    }

    /// Hash identifying a run for resumption: everything but `epochs` and
    /// the two paths.
    pub fn resume_key(&self) -> String {
        crate::provenance::config_hash(&TrainConfig {
            epochs: 0,
            dataset: PathBuf::new(),
            output_dir: PathBuf::new(),
            ..self.clone()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gets_recipe_defaults() {
        let c = TrainConfig::from_toml("dataset = \"d\"\noutput_dir = \"o\"\n", Path::new("/base")).unwrap();
        assert_eq!(c.dataset, PathBuf::from("/base/d"));
        assert_eq!((c.epochs, c.batch_size, c.patience), (100, 1, 8));
        assert_eq!((c.initial_lr, c.weight_decay, c.decay), (1e-3, 1e-4, 0.75));
        assert_eq!(c.plateau_metric, PlateauMetric::ValMpjpe);
    }

    #[test]
    fn unknown_keys_and_batches_are_rejected() {
        let base = Path::new(".");
        assert!(TrainConfig::from_toml("dataset=\"d\"\noutput_dir=\"o\"\nlearning_rate=1.0\n", base).is_err());
        assert!(TrainConfig::from_toml("dataset=\"d\"\noutput_dir=\"o\"\nbatch_size=4\n", base).is_err());
        assert!(TrainConfig::from_toml("output_dir=\"o\"\n", base).is_err());
    }
}
