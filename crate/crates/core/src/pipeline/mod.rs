//! Training, evaluation and inference on top of the network and loss modules.

pub mod evaluate;
pub mod gradcheck;
pub mod infer;
pub mod objective;
pub mod optim;
pub mod train;

pub use evaluate::{compare, comparison_markdown, evaluate, full_report, predict_probs, score, segment, Comparison, EvalOptions, Evaluation};
pub use gradcheck::{flatten, grad_check_suite, network_grad_check, GradCheckOptions};
pub use infer::{infer, InferOutcome};
pub use objective::{batch_objective, batch_probe, batch_value, BatchLoss, Mode, TrainExample};
pub use optim::{adamw_step, cosine_lr, AdamHyper, AdamState};
pub use train::{mean_dice_iou, patient_split, train, train_from, EpochLog, StepLog, TrainOutcome, TrainStatus};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::network::NetConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub min_lr: f64,
    pub seed: u64,
    /// Epochs without a validation IoU improvement before stopping; 0 disables.
    pub early_stop_patience: usize,
    /// Fraction of patients held out for validation.
    pub val_fraction: f64,
    /// Augmentation strength in `[0, 1]`; 0 trains on the raw images.
    pub augment_strength: f64,
    pub loss: LossWeights,
    pub net: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 1e-4,
            weight_decay: 1e-5,
            batch_size: 4,
            max_steps: 2000,
            min_lr: 0.0,
            seed: 0,
            early_stop_patience: 10,
            val_fraction: 0.2,
            augment_strength: 0.5,
            loss: LossWeights::default(),
            net: NetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr.is_finite() && self.min_lr >= 0.0 && self.initial_lr > self.min_lr) {
            return Err(Error::config("initial_lr", "need initial_lr > min_lr >= 0"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay", "must be finite and >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if self.loss.lambda_contrastive > 0.0 && self.batch_size < 2 {
            return Err(Error::config(
                "batch_size",
                "the contrastive term needs batch_size >= 2 (or set lambda_contrastive = 0)",
            ));
        }
        if self.max_steps == 0 {
            return Err(Error::config("max_steps", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::config("val_fraction", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.augment_strength) {
            return Err(Error::config("augment_strength", "must lie in [0, 1]"));
        }
        self.loss.validate()?;
        self.net.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn contrastive_needs_pairs_of_images() {
        let cfg = TrainConfig {
            batch_size: 1,
            ..TrainConfig::default()
        };
        let err = cfg.validate().unwrap_err();
        assert!(err.is_usage());
        assert!(err.to_string().contains("batch_size"));
        let ok = TrainConfig {
            batch_size: 1,
            loss: LossWeights {
                lambda_contrastive: 0.0,
                ..LossWeights::default()
            },
            ..TrainConfig::default()
        };
        ok.validate().unwrap();
    }

    #[test]
    fn learning_rate_ordering() {
        let cfg = TrainConfig {
            min_lr: 1e-3,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = TrainConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: TrainConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let partial: TrainConfig = toml::from_str("batch_size = 2\n[loss]\nlambda_boundary = 0.0\n").unwrap();
        assert_eq!(partial.batch_size, 2);
        assert_eq!(partial.loss.lambda_boundary, 0.0);
        assert_eq!(partial.loss.lambda_region, 1.0);
    }
}
