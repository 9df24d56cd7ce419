use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::augment::AugmentPolicy;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::metrics::PixelAggregation;
use crate::model::ModelConfig;

/// Training hyper-parameters, read from a TOML file whose keys mirror the
/// field names. Missing keys take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_start: f64,
    pub lr_floor: f64,
    pub decay_factor: f64,
    /// Steps between learning-rate decays.
    pub decay_period: u64,
    pub batch_size: usize,
    pub max_steps: u64,
    /// Seeds batch order and augmentation.
    pub seed: u64,
    pub loss_weights: LossWeights,
    /// Global gradient-norm bound.
    pub grad_clip: f64,
    /// Validate every this many steps (0: only after the last step).
    pub val_every: u64,
    pub eval_batch_size: usize,
    pub pixel_aggregation: PixelAggregation,
    /// Score the un-augmented training set after the last step.
    pub final_train_eval: bool,
    pub augment: AugmentPolicy,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_start: 1e-4,
            lr_floor: 1e-7,
            decay_factor: 0.1,
            decay_period: 10_000,
            batch_size: 4,
            max_steps: 1000,
            seed: 0,
            loss_weights: LossWeights::default(),
            grad_clip: 5.0,
            val_every: 0,
            eval_batch_size: 8,
            pixel_aggregation: PixelAggregation::Pooled,
            final_train_eval: true,
            augment: AugmentPolicy::none(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.lr_start.is_finite() && self.lr_start > 0.0) {
            return fail(format!("lr_start must be positive, got {}", self.lr_start));
        }
        if !(self.lr_floor >= 0.0 && self.lr_floor < self.lr_start) {
            return fail(format!("lr_floor must lie in [0, lr_start), got {}", self.lr_floor));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return fail(format!("decay_factor must lie in (0, 1), got {}", self.decay_factor));
        }
        if self.decay_period == 0 {
            return fail("decay_period must be positive".into());
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return fail("batch sizes must be positive".into());
        }
        if !(self.grad_clip > 0.0) {
            return fail(format!("grad_clip must be positive, got {}", self.grad_clip));
        }
        self.loss_weights.validate()?;
        self.augment.validate()?;
        self.model.validate()
    }

    /// Learning rate used for the update at 0-based `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        let k = (step / self.decay_period).min(i32::MAX as u64) as i32;
        (self.lr_start * self.decay_factor.powi(k)).max(self.lr_floor)
    }
}
