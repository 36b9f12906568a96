//! Experiment configuration, read from TOML. Field names mirror the model,
//! decoder, loss and training structs so a file is a plain key/value dump.

use std::path::{Path, PathBuf};

use polyp_core::{LossConfig, ModelConfig};
use polyp_data::{Normalization, SampleConfig, SynthConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch: usize,
    /// Global gradient-norm bound.
    pub clip: f64,
    pub decay_rate: f64,
    /// Epoch (1-based) from which the learning rate is multiplied by `decay_rate`.
    pub decay_epoch: usize,
    pub image_size: usize,
    pub optimizer: String,
    pub seed: u64,
    /// Stops training after this many iterations, mid-epoch if needed.
    pub max_iterations: Option<usize>,
    /// Held-out fraction of the training set used for checkpoint selection
    /// when no validation dataset is named.
    pub val_fraction: f64,
    /// Validate every this many epochs (and always after the last one).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-4,
            epochs: 100,
            batch: 16,
            clip: 0.5,
            decay_rate: 0.1,
            decay_epoch: 50,
            image_size: 352,
            optimizer: "adamw".into(),
            seed: 0,
            max_iterations: None,
            val_fraction: 0.1,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.batch == 0 {
            return bad("batch must be positive".into());
        }
        if !(self.clip > 0.0) {
            return bad(format!("clip must be positive, got {}", self.clip));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return bad(format!("decay_rate must be in (0, 1], got {}", self.decay_rate));
        }
        if self.decay_epoch == 0 || self.eval_every == 0 {
            return bad("decay_epoch and eval_every must be positive".into());
        }
        if self.image_size == 0 || !self.image_size.is_multiple_of(32) {
            return bad(format!("image_size {} is not a positive multiple of 32", self.image_size));
        }
        if self.optimizer != "adamw" {
            return bad(format!("unsupported optimizer '{}' (only adamw)", self.optimizer));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction must be in [0, 1), got {}", self.val_fraction));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (1-based): one step decay.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= self.decay_epoch {
            self.lr * self.decay_rate
        } else {
            self.lr
        }
    }
}

/// Procedurally generated training data written under `data.root`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n: usize,
    pub seed: u64,
    pub size: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self { n: 8, seed: 0, size: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Directory holding `<dataset>/{images,masks}`.
    pub root: PathBuf,
    pub train: String,
    pub val: Option<String>,
    pub test: Vec<String>,
    pub synthetic: Option<SynthSpec>,
    pub scales: Vec<f64>,
    pub normalization: Normalization,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            root: PathBuf::from("data"),
            train: "TrainDataset".into(),
            val: None,
            test: ["CVC-300", "CVC-ClinicDB", "Kvasir", "CVC-ColonDB", "ETIS-LaribPolypDB"].map(String::from).to_vec(),
            synthetic: None,
            scales: vec![0.75, 1.0, 1.25],
            normalization: Normalization::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub data: DataConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "polyp".into(),
            output_dir: PathBuf::from("runs/polyp"),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            loss: LossConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Small model on synthetic 64x64 data; trains on a laptop CPU in minutes.
    pub fn desk(root: impl Into<PathBuf>) -> Self {
        Self {
            name: "desk".into(),
            output_dir: PathBuf::from("runs/desk"),
            model: ModelConfig::desk(),
            train: TrainConfig {
                lr: 3e-3,
                epochs: 200,
                batch: 8,
                decay_epoch: 150,
                image_size: 64,
                eval_every: 50,
                ..TrainConfig::default()
            },
            loss: LossConfig::default(),
            data: DataConfig {
                root: root.into(),
                train: "synthetic".into(),
                test: vec!["synthetic".into()],
                synthetic: Some(SynthSpec::default()),
                ..DataConfig::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        self.sample_config().validate()?;
        Ok(())
    }

    pub fn sample_config(&self) -> SampleConfig {
        SampleConfig {
            image_size: self.train.image_size,
            scales: self.data.scales.clone(),
            normalization: self.data.normalization,
        }
    }

    pub fn synth_config(&self) -> Option<SynthConfig> {
        self.data.synthetic.as_ref().map(|s| SynthConfig { size: s.size, ..SynthConfig::default() })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::file(path, e))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?).map_err(|e| Error::file(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        for cfg in [ExperimentConfig::default(), ExperimentConfig::desk("/tmp/x")] {
            let text = cfg.to_toml_string().unwrap();
            assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = ExperimentConfig::from_toml_str("name = \"x\"\n[train]\nbatch = 4\n[model.decoder]\nvariant = \"no_cim\"\n").unwrap();
        assert_eq!(cfg.train.batch, 4);
        assert_eq!(cfg.train.lr, 1e-4);
        assert_eq!(cfg.model.decoder.variant, polyp_core::AblationVariant::NoCim);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_toml_str("[train]\nclip = 0.0\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[train]\noptimizer = \"sgd\"\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[train]\nimage_size = 350\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[model.decoder]\nvariant = \"nope\"\n").is_err());
    }

    #[test]
    fn single_step_decay() {
        let t = TrainConfig::default();
        assert_eq!(t.lr_at(49), 1e-4);
        assert!((t.lr_at(50) - 1e-5).abs() < 1e-20);
        assert!((t.lr_at(100) - 1e-5).abs() < 1e-20);
    }
}
