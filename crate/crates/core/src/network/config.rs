use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Learned upsampling operator used for residual and boundary injection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpMode {
    /// Nearest-neighbour resize followed by a 3×3 convolution.
    #[default]
    NearestConv,
    /// Transposed convolution with kernel = stride = factor.
    Transposed,
}

/// Ablation switches. Every branch keeps its parameters when switched off.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Toggles {
    pub suppression: bool,
    pub boundary: bool,
    pub channel_attention: bool,
    pub spatial_attention: bool,
    pub multiscale: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles {
            suppression: true,
            boundary: true,
            channel_attention: true,
            spatial_attention: true,
            multiscale: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub num_stages: usize,
    /// Channels of the full-resolution stream.
    pub full_channels: usize,
    /// Output channels of the pooled stream, one entry per stage.
    pub pooled_channels: Vec<usize>,
    /// Downsampling factor of the pooled stream relative to the input, per stage.
    pub pooled_scales: Vec<usize>,
    pub dilation_rates: Vec<usize>,
    pub attention_reduction: usize,
    /// Initial artifact suppression strength, kept in `[0, 1]`.
    pub suppression_strength_init: f64,
    /// Initial gain of the boundary injection term.
    pub boundary_gain_init: f64,
    pub latent_dim: usize,
    /// Working resolution (square) used for training and synthetic data.
    pub working_size: usize,
    pub up_mode: UpMode,
    /// Dropout probability in the projection heads (training only).
    pub dropout: f64,
    /// Maximum drop probability of stochastic depth on the deepest stage.
    pub stochastic_depth: f64,
    pub toggles: Toggles,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            num_stages: 4,
            full_channels: 32,
            pooled_channels: vec![64, 96, 128, 160],
            pooled_scales: vec![2, 4, 8, 16],
            dilation_rates: vec![1, 2, 4],
            attention_reduction: 4,
            suppression_strength_init: 0.5,
            boundary_gain_init: 0.1,
            latent_dim: 32,
            working_size: 128,
            up_mode: UpMode::NearestConv,
            dropout: 0.1,
            stochastic_depth: 0.0,
            toggles: Toggles::default(),
        }
    }
}

impl NetConfig {
    /// Desk-scale configuration: two stages, 8 full-resolution channels.
    pub fn tiny() -> Self {
        NetConfig {
            num_stages: 2,
            full_channels: 8,
            pooled_channels: vec![16, 16],
            pooled_scales: vec![2, 4],
            latent_dim: 16,
            working_size: 64,
            ..NetConfig::default()
        }
    }

    pub fn max_scale(&self) -> usize {
        self.pooled_scales.iter().copied().max().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_stages;
        if n == 0 {
            return Err(Error::config("num_stages", "must be at least 1"));
        }
        if self.full_channels == 0 {
            return Err(Error::config("full_channels", "must be at least 1"));
        }
        if self.pooled_channels.len() != n || self.pooled_channels.contains(&0) {
            return Err(Error::config(
                "pooled_channels",
                format!("need {n} positive entries, got {:?}", self.pooled_channels),
            ));
        }
        if self.pooled_scales.len() != n || self.pooled_scales.contains(&0) {
            return Err(Error::config(
                "pooled_scales",
                format!("need {n} positive entries, got {:?}", self.pooled_scales),
            ));
        }
        for pair in self.pooled_scales.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if a.max(b) % a.min(b) != 0 {
                return Err(Error::config(
                    "pooled_scales",
                    format!("consecutive scales {a} and {b} are not integer multiples"),
                ));
            }
        }
        if self.working_size == 0 {
            return Err(Error::config("working_size", "must be positive"));
        }
        for &s in &self.pooled_scales {
            if self.working_size % s != 0 {
                return Err(Error::config(
                    "pooled_scales",
                    format!("scale {s} does not divide working size {}", self.working_size),
                ));
            }
        }
        if self.dilation_rates.is_empty() {
            return Err(Error::config("dilation_rates", "must not be empty"));
        }
        if self.dilation_rates[0] == 0 || self.dilation_rates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(
                "dilation_rates",
                format!("must be strictly increasing and >= 1, got {:?}", self.dilation_rates),
            ));
        }
        if self.attention_reduction == 0 {
            return Err(Error::config("attention_reduction", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.suppression_strength_init) {
            return Err(Error::config("suppression_strength_init", "must lie in [0, 1]"));
        }
        if !self.boundary_gain_init.is_finite() {
            return Err(Error::config("boundary_gain_init", "must be finite"));
        }
        if self.latent_dim == 0 {
            return Err(Error::config("latent_dim", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.stochastic_depth) {
            return Err(Error::config("stochastic_depth", "must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Channels entering the multi-scale block of `stage`.
    pub(crate) fn block_in_channels(&self, stage: usize) -> usize {
        let prev = if stage == 0 {
            self.pooled_channels[0]
        } else {
            self.pooled_channels[stage - 1]
        };
        self.pooled_channels[stage] + prev
    }

    /// Width of the concatenated branch tensor `u` at `stage`.
    pub(crate) fn branch_concat_channels(&self, stage: usize) -> usize {
        self.pooled_channels[stage] * self.dilation_rates.len()
    }

    pub(crate) fn attention_hidden(&self, channels: usize) -> usize {
        (channels / self.attention_reduction).max(1)
    }
}

/// Number of normalization groups for `channels`: the largest of 4, 2, 1 that divides it.
pub fn norm_groups(channels: usize) -> usize {
    [4, 2, 1].into_iter().find(|g| channels % g == 0).unwrap_or(1)
}
