use crate::autograd::NodeId;
use crate::error::{Error, Result};
use crate::losses::{
    boundary_kinks, boundary_loss, boundary_target, contrastive_loss, total_loss, tversky_loss, BoundaryTarget, LossComponents,
    LossWeights, Probe,
};
use crate::mask::BinaryMap;
use crate::network::{normalize_image, Builder, ModelParams, NetConfig};
use crate::scalar::Scalar;
use crate::synthdata::{child_seed, Sample};
use crate::tensor::{FeatureMap, Tensor};

/// A network input with its ground truth and precomputed boundary target.
#[derive(Clone, Debug)]
pub struct TrainExample<T> {
    pub input: FeatureMap<T>,
    pub mask: BinaryMap,
    pub target: BoundaryTarget,
}

impl<T: Scalar> TrainExample<T> {
    pub fn from_sample(sample: &Sample, weights: &LossWeights) -> Result<Self> {
        let (h, w) = sample.dims();
        let input = normalize_image(sample.image.data(), h, w)?;
        let mut target = boundary_target(&sample.mask, weights.band_width)?;
        if weights.boundary_label_smoothing > 0.0 {
            target = target.smoothed(weights.boundary_label_smoothing)?;
        }
        Ok(TrainExample {
            input,
            mask: sample.mask.clone(),
            target,
        })
    }
}

#[derive(Clone, Debug)]
pub struct BatchLoss<T> {
    pub components: LossComponents,
    pub total: f64,
    /// Gradient of `total` per parameter tensor, aligned with the parameter store.
    pub grads: Vec<Tensor<T>>,
    /// Foreground probabilities of every view, row-major.
    pub probs: Vec<Vec<T>>,
}

/// How the network is run while computing the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Deterministic inference behaviour (no dropout or stochastic depth).
    Eval,
    /// Dropout and stochastic depth drawn from the given seed.
    Train(u64),
}

/// Composite objective over a batch and its gradient.
///
/// With `paired`, `views` holds `2B` entries: the first `B` are one augmented view
/// of each image and the last `B` the other, and the contrastive term pairs view
/// `k` with `k + B`. Region and boundary terms are averaged over every view.
pub fn batch_objective<T: Scalar>(
    params: &ModelParams<T>,
    net: &NetConfig,
    weights: &LossWeights,
    views: &[TrainExample<T>],
    paired: bool,
    mode: Mode,
) -> Result<BatchLoss<T>> {
    if views.is_empty() {
        return Err(Error::Param("empty batch".into()));
    }
    let use_contrastive = paired && weights.lambda_contrastive > 0.0;
    if paired && views.len() % 2 != 0 {
        return Err(Error::Param(format!("paired batch needs an even number of views, got {}", views.len())));
    }
    let n = views.len() as f64;
    let mut region = 0.0;
    let mut boundary = 0.0;
    let mut graphs = Vec::with_capacity(views.len());
    let mut seeds: Vec<Vec<(NodeId, Tensor<T>)>> = Vec::with_capacity(views.len());
    let mut latents = Vec::with_capacity(views.len());
    let mut probs = Vec::with_capacity(views.len());
    for (i, ex) in views.iter().enumerate() {
        let mut b = match mode {
            Mode::Eval => Builder::new(params, net),
            Mode::Train(seed) => Builder::training(params, net, child_seed(seed, i as u64)),
        };
        let input = b.graph.input(ex.input.clone());
        let out = b.forward(input)?;
        let g = b.graph;
        let p = g.value(out.probs).data();
        let z = g.value(out.logits).data();
        let shape = g.value(out.probs).shape().to_vec();
        let rl = tversky_loss(
            p,
            ex.mask.data(),
            T::lit(weights.tversky_alpha),
            T::lit(weights.tversky_beta),
            T::lit(weights.smooth_eps),
        )?;
        let bl = boundary_loss(z, &ex.target, weights.boundary_operand)?;
        region += rl.value.to_f64_lossy();
        boundary += bl.value.to_f64_lossy();
        let mut s = Vec::new();
        if weights.lambda_region > 0.0 {
            let k = T::lit(weights.lambda_region / n);
            s.push((out.probs, Tensor::from_vec(&shape, rl.grad.into_iter().map(|v| v * k).collect())?));
        }
        if weights.lambda_boundary > 0.0 {
            let k = T::lit(weights.lambda_boundary / n);
            s.push((out.logits, Tensor::from_vec(&shape, bl.grad.into_iter().map(|v| v * k).collect())?));
        }
        probs.push(p.to_vec());
        latents.push((out.latent, g.value(out.latent).data().to_vec()));
        seeds.push(s);
        graphs.push(g);
    }
    let mut contrastive = 0.0;
    if use_contrastive {
        let half = views.len() / 2;
        let fa: Vec<Vec<T>> = latents[..half].iter().map(|l| l.1.clone()).collect();
        let fb: Vec<Vec<T>> = latents[half..].iter().map(|l| l.1.clone()).collect();
        let cl = contrastive_loss(&fa, &fb, T::lit(weights.temperature))?;
        contrastive = cl.value.to_f64_lossy();
        let k = T::lit(weights.lambda_contrastive);
        for (i, grad) in cl.grad_a.into_iter().chain(cl.grad_b).enumerate() {
            let id = latents[i].0;
            let t = Tensor::from_vec(graphs[i].value(id).shape(), grad.into_iter().map(|x| x * k).collect())?;
            seeds[i].push((id, t));
        }
    }
    let components = LossComponents {
        region: region / n,
        boundary: boundary / n,
        contrastive,
    };
    let total = total_loss(components, weights);
    let mut grads: Vec<Tensor<T>> = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
    for (g, s) in graphs.iter().zip(&seeds) {
        if s.is_empty() {
            continue;
        }
        for (idx, grad) in g.backward(s)? {
            grads[idx].add_assign(&grad);
        }
    }
    Ok(BatchLoss {
        components,
        total,
        grads,
        probs,
    })
}

/// Objective value only, with the kink pattern of the evaluation attached.
pub fn batch_probe<T: Scalar>(
    params: &ModelParams<T>,
    net: &NetConfig,
    weights: &LossWeights,
    views: &[TrainExample<T>],
    paired: bool,
) -> Result<Probe> {
    let n = views.len() as f64;
    let mut total = 0.0;
    let mut pattern = Vec::new();
    let mut latents = Vec::with_capacity(views.len());
    for ex in views {
        let mut b = Builder::new(params, net);
        let input = b.graph.input(ex.input.clone());
        let out = b.forward(input)?;
        let g = &b.graph;
        let p = g.value(out.probs).data();
        let z = g.value(out.logits).data();
        let rl = tversky_loss(
            p,
            ex.mask.data(),
            T::lit(weights.tversky_alpha),
            T::lit(weights.tversky_beta),
            T::lit(weights.smooth_eps),
        )?;
        let bl = boundary_loss(z, &ex.target, weights.boundary_operand)?;
        total += (weights.lambda_region * rl.value.to_f64_lossy() + weights.lambda_boundary * bl.value.to_f64_lossy()) / n;
        pattern.extend(g.relu_pattern());
        if weights.lambda_boundary > 0.0 {
            pattern.extend(boundary_kinks(z, &ex.target, weights.boundary_operand));
        }
        latents.push(g.value(out.latent).data().to_vec());
    }
    if paired && weights.lambda_contrastive > 0.0 {
        let half = views.len() / 2;
        let cl = contrastive_loss(&latents[..half], &latents[half..], T::lit(weights.temperature))?;
        total += weights.lambda_contrastive * cl.value.to_f64_lossy();
    }
    Ok(Probe { value: total, pattern })
}

/// Objective value only.
pub fn batch_value<T: Scalar>(
    params: &ModelParams<T>,
    net: &NetConfig,
    weights: &LossWeights,
    views: &[TrainExample<T>],
    paired: bool,
) -> Result<f64> {
    Ok(batch_probe(params, net, weights, views, paired)?.value)
}
