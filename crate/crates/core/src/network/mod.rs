//! The dual-resolution encoder: FRRU cascade with attention, artifact suppression,
//! boundary injection and the decoder head.
//!
//! Every operation is built on the [`Graph`](crate::autograd::Graph) tape by
//! [`Builder`]; the free functions here evaluate single operations eagerly on
//! concrete feature maps.

pub mod checkpoint;
pub mod config;
pub mod model;
pub mod params;
pub mod postprocess;

pub use config::{NetConfig, Toggles, UpMode};
pub use model::{Builder, DualNodes, ForwardNodes};
pub use params::{init_params, param_layout, ModelParams, ParamSpec};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{FeatureMap, Tensor};

/// Results of an inference-mode forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutputs<T> {
    /// Logit map `z`, `H × W × 1`.
    pub logits: FeatureMap<T>,
    /// `σ(z)`, `H × W × 1`.
    pub probs: FeatureMap<T>,
    /// Artifact confidence map, `H × W × 1`.
    pub artifact_map: FeatureMap<T>,
    /// Final stage boundary features `b_N` (`H × W × C_r`); zero when the path is off.
    pub boundary_map: FeatureMap<T>,
    /// Unit-norm latent embedding.
    pub latent: Vec<T>,
}

/// Evaluation-mode forward pass.
pub fn forward<T: Scalar>(image: &FeatureMap<T>, params: &ModelParams<T>, config: &NetConfig) -> Result<ForwardOutputs<T>> {
    let mut b = Builder::new(params, config);
    let input = b.graph.input(image.clone());
    let n = b.forward(input)?;
    let (h, w, _) = image.hwc();
    let g = &b.graph;
    let boundary_map = match n.boundary {
        Some(id) => g.value(id).clone(),
        None => Tensor::zeros(&[h, w, config.full_channels]),
    };
    Ok(ForwardOutputs {
        logits: g.value(n.logits).clone(),
        probs: g.value(n.probs).clone(),
        artifact_map: g.value(n.artifact).clone(),
        boundary_map,
        latent: g.value(n.latent).data().to_vec(),
    })
}

/// Converts an RGB image in `[0, 1]` (`H × W × 3`, row-major) to a per-channel
/// standardized input map.
pub fn normalize_image<T: Scalar>(rgb: &[f32], height: usize, width: usize) -> Result<FeatureMap<T>> {
    if rgb.len() != height * width * 3 {
        return Err(Error::Shape(format!(
            "image buffer of {} values does not match {height}x{width}x3",
            rgb.len()
        )));
    }
    let n = (height * width) as f64;
    let mut mean = [0.0f64; 3];
    for px in rgb.chunks_exact(3) {
        for c in 0..3 {
            mean[c] += px[c] as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0f64; 3];
    for px in rgb.chunks_exact(3) {
        for c in 0..3 {
            var[c] += (px[c] as f64 - mean[c]).powi(2);
        }
    }
    let std: Vec<f64> = var.iter().map(|v| (v / n).sqrt().max(1e-3)).collect();
    let data = rgb
        .chunks_exact(3)
        .flat_map(|px| (0..3).map(move |c| (px[c] as f64, c)))
        .map(|(v, c)| T::lit((v - mean[c]) / std[c]))
        .collect();
    Tensor::from_vec(&[height, width, 3], data)
}

/// Eager single-op evaluators.
pub mod ops {
    use super::*;

    fn run<T: Scalar, F>(params: &ModelParams<T>, config: &NetConfig, inputs: &[&FeatureMap<T>], f: F) -> Result<Vec<FeatureMap<T>>>
    where
        F: FnOnce(&mut Builder<'_, T>, &[crate::autograd::NodeId]) -> Result<Vec<crate::autograd::NodeId>>,
    {
        let mut b = Builder::new(params, config);
        let ids: Vec<_> = inputs.iter().map(|&t| b.graph.input(t.clone())).collect();
        let outs = f(&mut b, &ids)?;
        Ok(outs.into_iter().map(|id| b.graph.value(id).clone()).collect())
    }

    /// Full-resolution map pooled to `stage`'s grid and projected to its pooled width.
    pub fn downsample_full<T: Scalar>(r: &FeatureMap<T>, stage: usize, params: &ModelParams<T>, config: &NetConfig) -> Result<FeatureMap<T>> {
        Ok(run(params, config, &[r], |b, ids| Ok(vec![b.downsample_full(ids[0], stage)?]))?.remove(0))
    }

    pub fn multiscale_block<T: Scalar>(x: &FeatureMap<T>, stage: usize, params: &ModelParams<T>, config: &NetConfig) -> Result<FeatureMap<T>> {
        Ok(run(params, config, &[x], |b, ids| Ok(vec![b.multiscale_block(ids[0], stage)?]))?.remove(0))
    }

    /// Returns `(s_c, u')` for the attention parameters under `prefix` (e.g. `stage0.ms`).
    pub fn channel_attention<T: Scalar>(u: &FeatureMap<T>, prefix: &str, params: &ModelParams<T>, config: &NetConfig) -> Result<(Vec<T>, FeatureMap<T>)> {
        let mut out = run(params, config, &[u], |b, ids| {
            let (g, o) = b.channel_attention(ids[0], prefix)?;
            Ok(vec![g, o])
        })?;
        let gated = out.pop().unwrap();
        Ok((out.pop().unwrap().into_data(), gated))
    }

    /// Returns `(m_s, u'')`.
    pub fn spatial_attention<T: Scalar>(u: &FeatureMap<T>, prefix: &str, params: &ModelParams<T>, config: &NetConfig) -> Result<(FeatureMap<T>, FeatureMap<T>)> {
        let mut out = run(params, config, &[u], |b, ids| {
            let (m, o) = b.spatial_attention(ids[0], prefix)?;
            Ok(vec![m, o])
        })?;
        let masked = out.pop().unwrap();
        Ok((out.pop().unwrap(), masked))
    }

    pub fn artifact_map<T: Scalar>(r: &FeatureMap<T>, params: &ModelParams<T>, config: &NetConfig) -> Result<FeatureMap<T>> {
        Ok(run(params, config, &[r], |b, ids| Ok(vec![b.artifact_map(ids[0])?]))?.remove(0))
    }

    /// `r ⊙ (1 − α a)` with an explicit strength.
    pub fn suppress<T: Scalar>(r: &FeatureMap<T>, a: &FeatureMap<T>, alpha: T) -> Result<FeatureMap<T>> {
        if !(alpha >= T::zero() && alpha <= T::one()) {
            return Err(Error::Param(format!("suppression strength {alpha} outside [0, 1]")));
        }
        let (h, w, c) = r.hwc();
        if a.shape() != [h, w, 1] {
            return Err(Error::Shape(format!("artifact map {:?} vs features {h}x{w}", a.shape())));
        }
        if a.data().iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
            return Err(Error::Param("artifact map values outside [0, 1]".into()));
        }
        Ok(Tensor::from_fn(h, w, c, |y, x, ch| r.at(y, x, ch) * (T::one() - alpha * a.at(y, x, 0))))
    }

    /// `b_n` for `stage`; zero-filled at full resolution when the boundary path is off.
    pub fn edge_features<T: Scalar>(x: &FeatureMap<T>, stage: usize, params: &ModelParams<T>, config: &NetConfig) -> Result<FeatureMap<T>> {
        let (h, w, _) = x.hwc();
        let s = config.pooled_scales[stage];
        let out = run(params, config, &[x], |b, ids| Ok(b.edge_features(ids[0], stage)?.into_iter().collect()))?;
        Ok(out
            .into_iter()
            .next()
            .unwrap_or_else(|| Tensor::zeros(&[h * s, w * s, config.full_channels])))
    }

    /// Raw oriented-filter responses `[d/dx, d/dy]` for the filters under `prefix`.
    pub fn edge_response<T: Scalar>(x: &FeatureMap<T>, prefix: &str, params: &ModelParams<T>, config: &NetConfig) -> Result<FeatureMap<T>> {
        Ok(run(params, config, &[x], |b, ids| Ok(vec![b.edge_response(ids[0], prefix)?]))?.remove(0))
    }

    /// One FRRU on concrete maps; returns `(r_n, p_n)`.
    pub fn frru_step<T: Scalar>(
        r: &FeatureMap<T>,
        p: &FeatureMap<T>,
        stage: usize,
        artifact: Option<&FeatureMap<T>>,
        params: &ModelParams<T>,
        config: &NetConfig,
    ) -> Result<(FeatureMap<T>, FeatureMap<T>)> {
        let mut inputs = vec![r, p];
        inputs.extend(artifact);
        let mut out = run(params, config, &inputs, |b, ids| {
            let state = DualNodes { r: ids[0], p: ids[1] };
            let next = b.frru_step(state, stage, ids.get(2).copied())?;
            Ok(vec![next.r, next.p])
        })?;
        let p = out.pop().unwrap();
        Ok((out.pop().unwrap(), p))
    }
}

#[cfg(test)]
mod tests;
