//! Training configuration: the full hyperparameter surface, dataset and
//! encoder descriptors, presets, and TOML round-tripping.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::data::{gen_synthetic_clusters, load_cifar_binary, Dataset};
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::model::EncoderSpec;

/// Where the training data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic {
        k: usize,
        dim: usize,
        n_per_class: usize,
        spread: f64,
        separation: f64,
        seed: u64,
    },
    Cifar {
        path: PathBuf,
    },
}

impl DatasetSpec {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSpec::Synthetic { k, dim, n_per_class, spread, separation, seed } => {
                gen_synthetic_clusters(*k, *dim, *n_per_class, *spread, *separation, *seed)
            }
            DatasetSpec::Cifar { path } => load_cifar_binary(path),
        }
    }

    /// Cluster spread for synthetic data (drives the default jitter scale).
    pub fn spread(&self) -> Option<f64> {
        match self {
            DatasetSpec::Synthetic { spread, .. } => Some(*spread),
            DatasetSpec::Cifar { .. } => None,
        }
    }

    /// Parse an inline descriptor such as
    /// `synthetic:k=5,dim=32,n_per_class=500,spread=1.0,separation=6.0,seed=1`
    /// or `cifar:/path/to/batch.bin`.
    pub fn parse_inline(s: &str) -> Result<DatasetSpec> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::config(format!("dataset spec '{s}' wants kind:...")))?;
        match kind {
            "cifar" => Ok(DatasetSpec::Cifar { path: PathBuf::from(rest) }),
            "synthetic" => {
                let (mut k, mut dim, mut n_per_class) = (5usize, 32usize, 500usize);
                let (mut spread, mut separation, mut seed) = (1.0f64, 6.0f64, 1u64);
                for pair in rest.split(',').filter(|p| !p.is_empty()) {
                    let (key, value) = pair
                        .split_once('=')
                        .ok_or_else(|| Error::config(format!("bad dataset field '{pair}'")))?;
                    fn parse<T: std::str::FromStr>(pair: &str, value: &str) -> Result<T> {
                        value
                            .parse()
                            .map_err(|_| Error::config(format!("bad value in '{pair}'")))
                    }
                    match key.trim() {
                        "k" => k = parse(pair, value)?,
                        "dim" => dim = parse(pair, value)?,
                        "n_per_class" => n_per_class = parse(pair, value)?,
                        "spread" => spread = parse(pair, value)?,
                        "separation" => separation = parse(pair, value)?,
                        "seed" => seed = parse(pair, value)?,
                        other => {
                            return Err(Error::config(format!("unknown dataset field '{other}'")))
                        }
                    }
                }
                Ok(DatasetSpec::Synthetic { k, dim, n_per_class, spread, separation, seed })
            }
            other => Err(Error::config(format!("unknown dataset kind '{other}'"))),
        }
    }
}

/// Named hyperparameter presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// The published training recipe: batch 160, lr 0.1, tau 0.5,
    /// alpha 0.8/0.1, clip 1.0, cosine t_max 100.
    Paper,
    /// Same recipe at desk scale: batch 64 and a small encoder.
    Desk,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Preset> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::config(format!("unknown preset '{other}' (paper|desk)"))),
        }
    }
}

/// Every knob of one training run. Serialized as TOML with these exact
/// field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub cosine_t_max: usize,
    pub batch_size: usize,
    pub alpha1: f64,
    pub alpha2: f64,
    pub tau: f64,
    pub clip_norm: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub seed: u64,
    pub hnpm_enabled: bool,
    pub block_student_grad: bool,
    pub hnpm_threshold: f64,
    /// Keep only the single most similar negative per anchor.
    pub most_similar_only: bool,
    /// Give the student an augmented view instead of the raw sample.
    pub augment_student: bool,
    /// Gaussian jitter scale for vector data; defaults to half the
    /// synthetic cluster spread when absent.
    pub noise_scale: Option<f64>,
    /// Write metrics with zeroed wall-clock seconds so artifacts are
    /// byte-reproducible.
    pub strict_determinism: bool,
    /// Checkpoint every n epochs (0 = final checkpoint only).
    pub checkpoint_every: usize,
    pub augmentation: AugmentConfig,
    pub dataset: DatasetSpec,
    pub encoder: EncoderSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        preset_config(Preset::Desk)
    }
}

pub fn preset_config(preset: Preset) -> TrainConfig {
    let (batch_size, lr) = match preset {
        Preset::Paper => (160, 0.1),
        // Desk override: the deep narrow desk encoder needs a gentler
        // rate than the published 0.1 to train without collapsing.
        Preset::Desk => (64, 0.005),
    };
    TrainConfig {
        lr,
        cosine_t_max: 100,
        batch_size,
        alpha1: 0.8,
        alpha2: 0.1,
        tau: 0.5,
        clip_norm: 1.0,
        adam_beta1: 0.9,
        adam_beta2: 0.999,
        adam_eps: 1e-8,
        epochs: 100,
        seed: 1,
        hnpm_enabled: true,
        block_student_grad: true,
        hnpm_threshold: 1.0,
        most_similar_only: false,
        augment_student: false,
        noise_scale: None,
        strict_determinism: true,
        checkpoint_every: 0,
        augmentation: AugmentConfig::default(),
        dataset: DatasetSpec::Synthetic {
            k: 5,
            dim: 32,
            n_per_class: 500,
            spread: 1.0,
            separation: 6.0,
            seed: 1,
        },
        encoder: EncoderSpec::vector(32, vec![24; 12], 2, 16),
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::config(format!("lr {} must be positive", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::config(format!("tau {} outside [0, 1]", self.tau)));
        }
        if self.batch_size < 2 {
            return Err(Error::config(format!(
                "batch_size {} too small: mining needs at least one candidate negative",
                self.batch_size
            )));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be positive"));
        }
        if self.cosine_t_max == 0 {
            return Err(Error::config("cosine_t_max must be positive"));
        }
        if self.clip_norm <= 0.0 {
            return Err(Error::config(format!("clip_norm {} must be positive", self.clip_norm)));
        }
        for (name, beta) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::config(format!("{name} {beta} outside [0, 1)")));
            }
        }
        if self.adam_eps <= 0.0 {
            return Err(Error::config(format!("adam_eps {} must be positive", self.adam_eps)));
        }
        if let Some(scale) = self.noise_scale {
            if scale < 0.0 {
                return Err(Error::config(format!("noise_scale {scale} must be non-negative")));
            }
        }
        self.loss_config().validate()?;
        self.augmentation.validate()?;
        self.encoder.validate()?;
        Ok(())
    }

    /// The loss hyperparameters, with mining widened to the full batch
    /// when hard negative mining is disabled.
    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            threshold: if self.hnpm_enabled { self.hnpm_threshold } else { f64::INFINITY },
            most_similar_only: self.most_similar_only,
        }
    }

    /// Jitter scale for vector augmentation: explicit override, or half
    /// the synthetic cluster spread.
    pub fn effective_noise_scale(&self) -> f64 {
        self.noise_scale
            .unwrap_or_else(|| self.dataset.spread().map(|s| 0.5 * s).unwrap_or(0.1))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::config(format!("config serialization failed: {e}")))
    }

    pub fn from_toml_str(text: &str) -> Result<TrainConfig> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        TrainConfig::from_toml_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }
}
