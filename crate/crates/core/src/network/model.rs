//! Graph construction for the dual-stream network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{norm_groups, NetConfig, UpMode};
use super::params::{ModelParams, ALPHA, ETA};
use crate::autograd::kernels::ConvSpec;
use crate::autograd::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Node handles for the two streams after a stage.
#[derive(Clone, Copy, Debug)]
pub struct DualNodes {
    pub r: NodeId,
    pub p: NodeId,
}

/// Node handles produced by a full forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardNodes {
    pub logits: NodeId,
    pub probs: NodeId,
    pub artifact: NodeId,
    pub boundary: Option<NodeId>,
    pub latent: NodeId,
    pub stem: NodeId,
    pub r_final: NodeId,
}

/// Builds one forward pass on a fresh tape.
///
/// In training mode a seeded RNG drives dropout and stochastic depth; evaluation
/// mode is fully deterministic and uses neither.
pub struct Builder<'a, T: Scalar> {
    pub graph: Graph<T>,
    params: &'a ModelParams<T>,
    config: &'a NetConfig,
    noise: Option<ChaCha8Rng>,
    last_edge: Option<NodeId>,
}

impl<'a, T: Scalar> Builder<'a, T> {
    pub fn new(params: &'a ModelParams<T>, config: &'a NetConfig) -> Self {
        Builder {
            graph: Graph::new(),
            params,
            config,
            noise: None,
            last_edge: None,
        }
    }

    pub fn training(params: &'a ModelParams<T>, config: &'a NetConfig, seed: u64) -> Self {
        Builder {
            graph: Graph::new(),
            params,
            config,
            noise: Some(ChaCha8Rng::seed_from_u64(seed)),
            last_edge: None,
        }
    }

    pub fn config(&self) -> &NetConfig {
        self.config
    }

    pub fn param(&mut self, name: &str) -> Result<NodeId> {
        let idx = self
            .params
            .index_of(name)
            .ok_or_else(|| Error::Param(format!("missing parameter `{name}`")))?;
        Ok(self.graph.param(idx, self.params.value(idx)))
    }

    fn conv(&mut self, x: NodeId, prefix: &str, spec: ConvSpec) -> Result<NodeId> {
        let w = self.param(&format!("{prefix}.w"))?;
        let b = self.param(&format!("{prefix}.b"))?;
        self.graph.conv(x, w, Some(b), spec)
    }

    fn norm_relu(&mut self, x: NodeId, prefix: &str) -> Result<NodeId> {
        let c = self.graph.value(x).hwc().2;
        let g = self.param(&format!("{prefix}.g"))?;
        let b = self.param(&format!("{prefix}.b"))?;
        let n = self.graph.group_norm(x, g, b, norm_groups(c))?;
        Ok(self.graph.relu(n))
    }

    /// Depthwise 3×3 (dilated) → pointwise → norm → ReLU.
    fn separable(&mut self, x: NodeId, prefix: &str, dilation: usize) -> Result<NodeId> {
        let w = self.param(&format!("{prefix}.dw.w"))?;
        let b = self.param(&format!("{prefix}.dw.b"))?;
        let d = self.graph.depthwise(x, w, Some(b), ConvSpec::same(3, dilation))?;
        let pw = self.conv(d, &format!("{prefix}.pw"), ConvSpec::pointwise())?;
        self.norm_relu(pw, &format!("{prefix}.norm"))
    }

    /// Learned upsampling by `factor`.
    pub fn up(&mut self, x: NodeId, prefix: &str, factor: usize) -> Result<NodeId> {
        match self.config.up_mode {
            UpMode::NearestConv => {
                let u = self.graph.upsample(x, factor)?;
                self.conv(u, prefix, ConvSpec::same(3, 1))
            }
            UpMode::Transposed => {
                let w = self.param(&format!("{prefix}.w"))?;
                let b = self.param(&format!("{prefix}.b"))?;
                self.graph.conv_transpose(x, w, Some(b), factor)
            }
        }
    }

    /// Learned average pooling of the full-resolution stream to the stage's pooled grid.
    pub fn downsample_full(&mut self, r: NodeId, stage: usize) -> Result<NodeId> {
        let factor = self.config.pooled_scales[stage];
        let pooled = self.graph.avg_pool(r, factor)?;
        self.conv(pooled, &format!("stage{stage}.down"), ConvSpec::pointwise())
    }

    /// Returns the channel gate `s_c` (`1 × 1 × C`) and the gated map.
    pub fn channel_attention(&mut self, u: NodeId, prefix: &str) -> Result<(NodeId, NodeId)> {
        let c = self.graph.value(u).hwc().2;
        if !self.config.toggles.channel_attention {
            let ones = self.graph.input(Tensor::full(&[1, 1, c], T::one()));
            return Ok((ones, u));
        }
        let pooled = self.graph.global_avg_pool(u)?;
        let h = self.conv(pooled, &format!("{prefix}.ca1"), ConvSpec::pointwise())?;
        let h = self.graph.relu(h);
        let s = self.conv(h, &format!("{prefix}.ca2"), ConvSpec::pointwise())?;
        let gate = self.graph.sigmoid(s);
        let out = self.graph.mul_broadcast(u, gate)?;
        Ok((gate, out))
    }

    /// Returns the spatial mask `m_s` (`H × W × 1`) and the masked map.
    pub fn spatial_attention(&mut self, u: NodeId, prefix: &str) -> Result<(NodeId, NodeId)> {
        let (h, w, _) = self.graph.value(u).hwc();
        if !self.config.toggles.spatial_attention {
            let ones = self.graph.input(Tensor::full(&[h, w, 1], T::one()));
            return Ok((ones, u));
        }
        let s = self.conv(u, &format!("{prefix}.sa"), ConvSpec::same(3, 1))?;
        let mask = self.graph.sigmoid(s);
        let out = self.graph.mul_broadcast(u, mask)?;
        Ok((mask, out))
    }

    /// Parallel dilated separable branches, channel then spatial attention, 1×1 projection.
    pub fn multiscale_block(&mut self, x: NodeId, stage: usize) -> Result<NodeId> {
        let expected = self.config.block_in_channels(stage);
        let got = self.graph.value(x).hwc().2;
        if got != expected {
            return Err(Error::Shape(format!(
                "stage {stage} block expects {expected} input channels, got {got}"
            )));
        }
        let p = format!("stage{stage}.ms");
        let u = if self.config.toggles.multiscale {
            let mut branches = Vec::with_capacity(self.config.dilation_rates.len());
            for &d in &self.config.dilation_rates {
                branches.push(self.separable(x, &format!("{p}.d{d}"), d)?);
            }
            self.graph.concat(&branches)?
        } else {
            self.separable(x, &format!("{p}.single"), 1)?
        };
        let (_, u1) = self.channel_attention(u, &p)?;
        let (_, u2) = self.spatial_attention(u1, &p)?;
        self.conv(u2, &format!("{p}.proj"), ConvSpec::pointwise())
    }

    /// Artifact confidence map `a ∈ [0, 1]^{H×W}` from full-resolution features.
    pub fn artifact_map(&mut self, r: NodeId) -> Result<NodeId> {
        let h = self.conv(r, "artifact.conv1", ConvSpec::same(3, 1))?;
        let h = self.graph.relu(h);
        let z = self.conv(h, "artifact.conv2", ConvSpec::pointwise())?;
        Ok(self.graph.sigmoid(z))
    }

    /// `r ⊙ (1 − α a)`, broadcast over channels.
    pub fn suppress(&mut self, r: NodeId, a: NodeId) -> Result<NodeId> {
        if !self.config.toggles.suppression {
            return Ok(r);
        }
        let alpha = self.params.scalar(ALPHA)?;
        if !(alpha >= T::zero() && alpha <= T::one()) {
            return Err(Error::Param(format!("suppression strength {alpha} outside [0, 1]")));
        }
        let alpha = self.param(ALPHA)?;
        let scaled = self.graph.scale_by(a, alpha)?;
        let keep = self.graph.affine(scaled, -T::one(), T::one());
        self.graph.mul_broadcast(r, keep)
    }

    /// Oriented difference filters on the pooled features, projected and upsampled to
    /// the full-resolution stream. `None` when the boundary path is disabled.
    pub fn edge_features(&mut self, x: NodeId, stage: usize) -> Result<Option<NodeId>> {
        if !self.config.toggles.boundary {
            return Ok(None);
        }
        let p = format!("stage{stage}.edge");
        let e = self.edge_response(x, &p)?;
        let pw = self.conv(e, &format!("{p}.pw"), ConvSpec::pointwise())?;
        let e = self.graph.relu(pw);
        let proj = self.conv(e, &format!("{p}.proj"), ConvSpec::pointwise())?;
        let factor = self.config.pooled_scales[stage];
        Ok(Some(self.up(proj, &format!("{p}.up"), factor)?))
    }

    /// Raw responses of the two oriented filters, concatenated `[d/dx, d/dy]`.
    pub fn edge_response(&mut self, x: NodeId, prefix: &str) -> Result<NodeId> {
        let wx = self.param(&format!("{prefix}.dx"))?;
        let wy = self.param(&format!("{prefix}.dy"))?;
        let gx = self.graph.depthwise(x, wx, None, ConvSpec::same(3, 1))?;
        let gy = self.graph.depthwise(x, wy, None, ConvSpec::same(3, 1))?;
        self.graph.concat(&[gx, gy])
    }

    /// Brings the incoming pooled stream to this stage's pooled resolution.
    fn resize_pooled(&mut self, p: NodeId, stage: usize) -> Result<NodeId> {
        if stage == 0 {
            return Ok(p);
        }
        let s = self.config.pooled_scales[stage];
        let prev = self.config.pooled_scales[stage - 1];
        let prefix = format!("stage{stage}.resize");
        if s > prev {
            let c = self.conv(p, &prefix, ConvSpec::patch(s / prev))?;
            self.norm_relu(c, &format!("stage{stage}.resize_norm"))
        } else if s < prev {
            self.up(p, &prefix, prev / s)
        } else {
            Ok(p)
        }
    }

    /// One full-resolution residual unit.
    ///
    /// `artifact` is the artifact map to suppress with before this unit, if any.
    pub fn frru_step(&mut self, state: DualNodes, stage: usize, artifact: Option<NodeId>) -> Result<DualNodes> {
        let r_prev = match artifact {
            Some(a) => self.suppress(state.r, a)?,
            None => state.r,
        };
        let p_prev = self.resize_pooled(state.p, stage)?;
        let r_down = self.downsample_full(r_prev, stage)?;
        let joined = self.graph.concat(&[r_down, p_prev])?;
        let x = self.multiscale_block(joined, stage)?;

        let factor = self.config.pooled_scales[stage];
        let proj = self.conv(x, &format!("stage{stage}.delta.proj"), ConvSpec::pointwise())?;
        let delta = self.up(proj, &format!("stage{stage}.delta.up"), factor)?;
        let mut residual = delta;
        if let Some(b) = self.edge_features(x, stage)? {
            self.last_edge = Some(b);
            let eta = self.param(ETA)?;
            let eb = self.graph.scale_by(b, eta)?;
            residual = self.graph.add(residual, eb)?;
        }

        let drop_p = self.config.stochastic_depth * (stage + 1) as f64 / self.config.num_stages as f64;
        if drop_p > 0.0 {
            if let Some(rng) = self.noise.as_mut() {
                if rng.gen::<f64>() < drop_p {
                    return Ok(DualNodes { r: r_prev, p: x });
                }
                residual = self.graph.affine(residual, T::lit(1.0 / (1.0 - drop_p)), T::zero());
            }
        }
        let r = self.graph.add(r_prev, residual)?;
        Ok(DualNodes { r, p: x })
    }

    fn dropout(&mut self, x: NodeId) -> Result<NodeId> {
        let p = self.config.dropout;
        let Some(rng) = self.noise.as_mut().filter(|_| p > 0.0) else {
            return Ok(x);
        };
        let shape = self.graph.value(x).shape().to_vec();
        let keep = T::lit(1.0 / (1.0 - p));
        let n: usize = shape.iter().product();
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let m = self.graph.input(Tensor::from_vec(&shape, mask)?);
        self.graph.mul_broadcast(x, m)
    }

    /// Separable conv + attention head producing the single-channel logit map.
    pub fn decoder(&mut self, r: NodeId) -> Result<NodeId> {
        let h = self.separable(r, "dec.sep", 1)?;
        let (_, h) = self.channel_attention(h, "dec")?;
        let (_, h) = self.spatial_attention(h, "dec")?;
        self.conv(h, "dec.out", ConvSpec::pointwise())
    }

    /// Unit-norm projection of the globally pooled final pooled features.
    pub fn latent(&mut self, p: NodeId) -> Result<NodeId> {
        let g = self.graph.global_avg_pool(p)?;
        let h = self.conv(g, "latent.fc1", ConvSpec::pointwise())?;
        let h = self.graph.relu(h);
        let h = self.dropout(h)?;
        let f = self.conv(h, "latent.fc2", ConvSpec::pointwise())?;
        Ok(self.graph.l2_normalize(f))
    }

    /// Stem, artifact suppression, the FRRU cascade, decoder head and latent projection.
    pub fn forward(&mut self, image: NodeId) -> Result<ForwardNodes> {
        let (h, w, c) = self.graph.value(image).hwc();
        if c != 3 {
            return Err(Error::Shape(format!("expected a 3-channel image, got {c} channels")));
        }
        let s = self.config.max_scale();
        if h % s != 0 || w % s != 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} is not divisible by the largest pooled scale {s}; pad the image to a multiple of {s}"
            )));
        }
        let stem = self.conv(image, "stem.conv", ConvSpec::same(3, 1))?;
        let stem = self.norm_relu(stem, "stem.norm")?;
        let p0 = self.conv(stem, "pool_stem.conv", ConvSpec::patch(self.config.pooled_scales[0]))?;
        let p0 = self.norm_relu(p0, "pool_stem.norm")?;
        let artifact = self.artifact_map(stem)?;

        let mut state = DualNodes { r: stem, p: p0 };
        self.last_edge = None;
        for stage in 0..self.config.num_stages {
            let a = (stage == 0).then_some(artifact);
            state = self.frru_step(state, stage, a)?;
        }
        let boundary = self.last_edge;
        let logits = self.decoder(state.r)?;
        let probs = self.graph.sigmoid(logits);
        let latent = self.latent(state.p)?;
        Ok(ForwardNodes {
            logits,
            probs,
            artifact,
            boundary,
            latent,
            stem,
            r_final: state.r,
        })
    }
}
