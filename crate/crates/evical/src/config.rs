//! JSON experiment configuration: schema, validation with field names in
//! error messages, and dataset loading.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{self, DataError, Dataset};
use crate::engine::{ALConfig, AblationFlags, Strategy};
use crate::losses::LossWeights;
use crate::network::MlpSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("field {field}: {message}")]
    Invalid { field: &'static str, message: String },
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Blobs {
        k: usize,
        n_per_class: usize,
        #[serde(default = "default_spread")]
        spread: f64,
        #[serde(default)]
        seed: u64,
        /// Held-out samples per class; defaults to n_per_class / 5.
        #[serde(default)]
        test_n_per_class: Option<usize>,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        /// Optional training-pool subsample size.
        #[serde(default)]
        subsample: Option<usize>,
        #[serde(default)]
        test_subsample: Option<usize>,
        #[serde(default)]
        subsample_seed: u64,
    },
}

fn default_spread() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub input_noise_std: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128],
            input_noise_std: 0.1,
            init_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub epochs_per_cycle: u32,
    pub batch_size: usize,
    pub lr: f64,
    /// Per-epoch multiplicative learning-rate decay within a cycle.
    pub lr_decay: f64,
    pub momentum: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs_per_cycle: 15,
            batch_size: 64,
            lr: 0.05,
            lr_decay: 1.0,
            momentum: 0.9,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlSection {
    pub num_cycle: u32,
    pub labeled_fraction: f64,
    pub budget_fraction: f64,
    pub strategy: String,
    pub ablation: AblationFlags,
    pub stratified_seed: bool,
}

impl Default for AlSection {
    fn default() -> Self {
        Self {
            num_cycle: 7,
            labeled_fraction: 0.10,
            budget_fraction: 0.05,
            strategy: "edalssc".to_string(),
            ablation: AblationFlags::default(),
            stratified_seed: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub lambda: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub omega: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            lambda: w.lambda,
            beta1: w.beta1,
            beta2: w.beta2,
            omega: w.omega,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub al: AlSection,
    #[serde(default)]
    pub loss: LossSection,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let bytes = std::fs::read(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: ExperimentConfig = serde_json::from_slice(&bytes)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.strategy()?;
        if self.al.num_cycle == 0 {
            return Err(invalid("al.num_cycle", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.al.labeled_fraction) || self.al.labeled_fraction == 0.0 {
            return Err(invalid("al.labeled_fraction", "must lie in (0, 1)"));
        }
        if self.al.budget_fraction <= 0.0 || self.al.budget_fraction >= 1.0 {
            return Err(invalid("al.budget_fraction", "must lie in (0, 1)"));
        }
        if self.training.epochs_per_cycle == 0 {
            return Err(invalid("training.epochs_per_cycle", "must be positive"));
        }
        if self.training.batch_size == 0 {
            return Err(invalid("training.batch_size", "must be positive"));
        }
        if !(self.training.lr_decay > 0.0 && self.training.lr_decay <= 1.0) {
            return Err(invalid("training.lr_decay", "must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.loss.omega) {
            return Err(invalid("loss.omega", "must lie in [0, 1)"));
        }
        if let DatasetConfig::Blobs { k, n_per_class, .. } = &self.dataset {
            if *k < 2 {
                return Err(invalid("dataset.k", "need at least 2 classes"));
            }
            if *n_per_class == 0 {
                return Err(invalid("dataset.n_per_class", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn strategy(&self) -> Result<Strategy, ConfigError> {
        self.al
            .strategy
            .parse()
            .map_err(|e: String| invalid("al.strategy", e))
    }

    /// Load or synthesize the (train, test) splits, standardized on the
    /// training statistics.
    pub fn load_dataset(&self) -> Result<(Dataset, Dataset), DataError> {
        let (mut train, mut test) = match &self.dataset {
            DatasetConfig::Blobs {
                k,
                n_per_class,
                spread,
                seed,
                test_n_per_class,
            } => {
                let train = data::make_blobs(*k, *n_per_class, *spread, *seed)?;
                let test_n = test_n_per_class.unwrap_or((n_per_class / 5).max(1));
                let test = data::make_blobs(*k, test_n, *spread, seed.wrapping_add(0x7e57))?;
                (train, test)
            }
            DatasetConfig::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                subsample,
                test_subsample,
                subsample_seed,
            } => {
                let mut train = data::read_idx(train_images, train_labels)?;
                let mut test = data::read_idx(test_images, test_labels)?;
                if let Some(n) = subsample {
                    train = train.subsample(*n, *subsample_seed);
                }
                if let Some(n) = test_subsample {
                    test = test.subsample(*n, subsample_seed.wrapping_add(1));
                }
                // Align class counts across splits.
                let k = train.num_classes.max(test.num_classes);
                train.num_classes = k;
                test.num_classes = k;
                (train, test)
            }
        };
        data::standardize(&mut train, &mut test);
        Ok((train, test))
    }

    /// Assemble the run pieces for a given seed, with optional CLI overrides
    /// already applied to `self`.
    pub fn build(&self, seed: u64, input_dim: usize, num_classes: usize) -> Result<(ALConfig, MlpSpec, LossWeights), ConfigError> {
        let strategy = self.strategy()?;
        let mut layer_sizes = vec![input_dim];
        layer_sizes.extend(&self.model.hidden);
        layer_sizes.push(num_classes);
        let spec = MlpSpec {
            layer_sizes,
            input_noise_std: self.model.input_noise_std,
            rng_seed: self.model.init_seed,
        };
        let al = ALConfig {
            num_cycle: self.al.num_cycle,
            labeled_fraction: self.al.labeled_fraction,
            budget_fraction: self.al.budget_fraction,
            epochs_per_cycle: self.training.epochs_per_cycle,
            batch_size: self.training.batch_size,
            lr: self.training.lr,
            lr_decay: self.training.lr_decay,
            momentum: self.training.momentum,
            strategy,
            ablation: self.al.ablation,
            seed,
            stratified_seed: self.al.stratified_seed,
        };
        let weights = LossWeights {
            lambda: self.loss.lambda,
            beta1: self.loss.beta1,
            beta2: self.loss.beta2,
            omega: self.loss.omega,
            num_cycle: self.al.num_cycle,
            cycle: 0,
        };
        Ok((al, spec, weights))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_blobs_config_parses_with_defaults() {
        let json = r#"{"dataset": {"kind": "blobs", "k": 3, "n_per_class": 50}}"#;
        let cfg: ExperimentConfig = serde_json::from_str(json).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.al.num_cycle, 7);
        assert_eq!(cfg.training.batch_size, 64);
        let (train, test) = cfg.load_dataset().unwrap();
        assert_eq!(train.len(), 150);
        assert_eq!(test.len(), 30);
    }

    #[test]
    fn unknown_strategy_names_field() {
        let json = r#"{
            "dataset": {"kind": "blobs", "k": 3, "n_per_class": 50},
            "al": {"strategy": "bogus"}
        }"#;
        let cfg: ExperimentConfig = serde_json::from_str(json).unwrap();
        let err = cfg.validate().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("al.strategy"), "{msg}");
        assert!(msg.contains("bogus"), "{msg}");
    }

    #[test]
    fn lr_decay_out_of_range_rejected() {
        let json = r#"{
            "dataset": {"kind": "blobs", "k": 3, "n_per_class": 50},
            "training": {"lr_decay": 0.0}
        }"#;
        let cfg: ExperimentConfig = serde_json::from_str(json).unwrap();
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("training.lr_decay"), "{msg}");
    }

    #[test]
    fn unknown_fields_rejected() {
        let json = r#"{"dataset": {"kind": "blobs", "k": 3, "n_per_class": 5, "nope": 1}}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(json).is_err());
    }

    #[test]
    fn build_assembles_layer_sizes() {
        let json = r#"{"dataset": {"kind": "blobs", "k": 4, "n_per_class": 50}}"#;
        let cfg: ExperimentConfig = serde_json::from_str(json).unwrap();
        let (al, spec, weights) = cfg.build(17, 2, 4).unwrap();
        assert_eq!(spec.layer_sizes, vec![2, 128, 4]);
        assert_eq!(al.seed, 17);
        assert_eq!(weights.num_cycle, 7);
    }
}
