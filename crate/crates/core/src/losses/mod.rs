//! The composite training objective and the finite-difference gradient checker.
//!
//! Each loss returns its value together with the gradient with respect to its
//! input, so the network tape can be seeded directly with `dL/dp` or `dL/df`.

pub mod boundary;
pub mod contrastive;
pub mod gradcheck;
pub mod tversky;

pub use boundary::{boundary_kinks, boundary_loss, boundary_target, signed_distance, BoundaryOperand, BoundaryTarget};
pub use contrastive::{contrastive_loss, ContrastiveGrad};
pub use gradcheck::{grad_check, grad_check_piecewise, relative_error, sample_coordinates, GradCheckReport, Probe};
pub use tversky::tversky_loss;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A loss value and its gradient with respect to the loss input.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad<T> {
    pub value: T,
    pub grad: Vec<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_region: f64,
    pub lambda_boundary: f64,
    pub lambda_contrastive: f64,
    /// False-positive weight of the Tversky index.
    pub tversky_alpha: f64,
    /// False-negative weight of the Tversky index.
    pub tversky_beta: f64,
    pub temperature: f64,
    pub band_width: f64,
    pub smooth_eps: f64,
    pub boundary_operand: BoundaryOperand,
    /// Clip soft boundary targets to `[δ, 1 − δ]`; 0 disables.
    pub boundary_label_smoothing: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_region: 1.0,
            lambda_boundary: 0.5,
            lambda_contrastive: 0.1,
            tversky_alpha: 0.3,
            tversky_beta: 0.7,
            temperature: 0.2,
            band_width: 3.0,
            smooth_eps: 1e-6,
            boundary_operand: BoundaryOperand::Probability,
            boundary_label_smoothing: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_region", self.lambda_region),
            ("lambda_boundary", self.lambda_boundary),
            ("lambda_contrastive", self.lambda_contrastive),
            ("tversky_alpha", self.tversky_alpha),
            ("tversky_beta", self.tversky_beta),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be finite and >= 0"));
            }
        }
        if self.tversky_alpha + self.tversky_beta <= 0.0 {
            return Err(Error::config("tversky_alpha", "tversky_alpha + tversky_beta must be > 0"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::config("temperature", "must be > 0"));
        }
        if !(self.band_width >= 1.0) {
            return Err(Error::config("band_width", "must be >= 1"));
        }
        if !(self.smooth_eps > 0.0) {
            return Err(Error::config("smooth_eps", "must be > 0"));
        }
        if !(0.0..0.5).contains(&self.boundary_label_smoothing) {
            return Err(Error::config("boundary_label_smoothing", "must lie in [0, 0.5)"));
        }
        Ok(())
    }
}

/// Individual loss terms of one objective evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossComponents {
    pub region: f64,
    pub boundary: f64,
    pub contrastive: f64,
}

/// `λ₁·region + λ₂·boundary + λ₃·contrastive`.
pub fn total_loss(c: LossComponents, w: &LossWeights) -> f64 {
    w.lambda_region * c.region + w.lambda_boundary * c.boundary + w.lambda_contrastive * c.contrastive
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_is_weighted_sum() {
        let w = LossWeights {
            lambda_region: 1.0,
            lambda_boundary: 0.5,
            lambda_contrastive: 0.1,
            ..LossWeights::default()
        };
        let c = LossComponents {
            region: 0.3,
            boundary: 0.6,
            contrastive: 1.1,
        };
        assert!((total_loss(c, &w) - 0.71).abs() < 1e-12);
        assert_eq!(total_loss(LossComponents::default(), &w), 0.0);
        let region_only = LossWeights {
            lambda_region: 1.0,
            lambda_boundary: 0.0,
            lambda_contrastive: 0.0,
            ..w
        };
        assert_eq!(total_loss(c, &region_only), 0.3);
    }

    #[test]
    fn total_is_linear_in_each_component() {
        let w = LossWeights::default();
        let base = LossComponents {
            region: 0.2,
            boundary: 0.4,
            contrastive: 0.9,
        };
        let mut bumped = base;
        bumped.boundary += 1.0;
        assert!((total_loss(bumped, &w) - total_loss(base, &w) - w.lambda_boundary).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        LossWeights::default().validate().unwrap();
        let bad = LossWeights {
            temperature: 0.0,
            ..LossWeights::default()
        };
        assert!(bad.validate().unwrap_err().to_string().contains("temperature"));
        let bad = LossWeights {
            tversky_alpha: 0.0,
            tversky_beta: 0.0,
            ..LossWeights::default()
        };
        assert!(bad.validate().is_err());
        let bad = LossWeights {
            lambda_boundary: -1.0,
            ..LossWeights::default()
        };
        assert!(bad.validate().is_err());
    }
}
