use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::network::ModelConfig;
use crate::util::sha256_hex;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Cosine,
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Switches for the ablation arms. `use_drgo` overrides `model.encoder.use_drgo`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    pub use_drgo: bool,
    pub use_grad_loss: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self {
            use_drgo: true,
            use_grad_loss: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub initial_lr: f64,
    pub final_lr: f64,
    pub lr_schedule: LrSchedule,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub loss: LossConfig,
    pub model: ModelConfig,
    pub seed: u64,
    pub ablation: AblationFlags,
    /// Share of the pooled training images held out for best-checkpoint selection.
    pub validation_fraction: f64,
    /// Stops after this many optimizer steps in total, mid-epoch if needed.
    pub max_steps: Option<usize>,
    /// Keeps a numbered checkpoint for every epoch besides `last` and `best`.
    pub keep_epoch_checkpoints: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::harvard()
    }
}

impl TrainConfig {
    /// 100 epochs, cosine decay 1e-4 to 3e-7, batch 4.
    pub fn harvard() -> Self {
        Self {
            epochs: 100,
            initial_lr: 1e-4,
            final_lr: 3e-7,
            lr_schedule: LrSchedule::Cosine,
            batch_size: 4,
            optimizer: AdamConfig::default(),
            loss: LossConfig::default(),
            model: ModelConfig::default(),
            seed: 0,
            ablation: AblationFlags::default(),
            validation_fraction: 0.1,
            max_steps: None,
            keep_epoch_checkpoints: false,
        }
    }

    /// 25 epochs at a constant 1e-4.
    pub fn brats() -> Self {
        Self {
            epochs: 25,
            lr_schedule: LrSchedule::Constant,
            final_lr: 1e-4,
            ..Self::harvard()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "harvard" => Ok(Self::harvard()),
            "brats" => Ok(Self::brats()),
            other => Err(Error::Config(format!(
                "unknown preset {other:?}; available: harvard, brats"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Config("initial_lr must be positive".into()));
        }
        if !(self.final_lr >= 0.0 && self.final_lr <= self.initial_lr) {
            return Err(Error::Config("final_lr must lie in [0, initial_lr]".into()));
        }
        let o = &self.optimizer;
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || o.epsilon <= 0.0 {
            return Err(Error::Config("adam needs beta1, beta2 in [0, 1) and epsilon > 0".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must lie in [0, 1)".into()));
        }
        if self.max_steps == Some(0) {
            return Err(Error::Config("max_steps must be at least 1 when set".into()));
        }
        self.loss.validate()?;
        self.effective_model().validate()
    }

    /// The model config with the ablation switch applied.
    pub fn effective_model(&self) -> ModelConfig {
        let mut m = self.model.clone();
        m.encoder.use_drgo = self.ablation.use_drgo;
        m
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    /// Learning rate for a 0-based epoch. Cosine decay reaches `final_lr` at the last epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.initial_lr,
            LrSchedule::Cosine => {
                if self.epochs <= 1 {
                    return self.initial_lr;
                }
                let t = epoch.min(self.epochs - 1) as f64 / (self.epochs - 1) as f64;
                self.final_lr
                    + 0.5 * (self.initial_lr - self.final_lr) * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}
