use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::losses::{grad_check_piecewise, GradCheckReport, LossWeights};
use crate::network::{init_params, ModelParams, NetConfig};
use crate::synthdata::{generate_dataset, two_views, SynthConfig};

use super::objective::{batch_objective, batch_probe, Mode, TrainExample};

/// All parameters concatenated in store order.
pub fn flatten(params: &ModelParams<f64>) -> Vec<f64> {
    params.iter().flat_map(|(_, t)| t.data().iter().copied()).collect()
}

fn unflatten(params: &mut ModelParams<f64>, flat: &[f64]) {
    let mut k = 0;
    for i in 0..params.len() {
        let d = params.value_mut(i).data_mut();
        d.copy_from_slice(&flat[k..k + d.len()]);
        k += d.len();
    }
}

fn coordinate_label(params: &ModelParams<f64>, mut index: usize) -> String {
    for (name, t) in params.iter() {
        if index < t.len() {
            return format!("{name}[{index}]");
        }
        index -= t.len();
    }
    format!("#{index}")
}

/// Checks the analytic gradient of the composite objective against central
/// differences on `coords` randomly drawn coordinates of the flattened parameters.
/// Coordinates whose difference interval crosses a ReLU or absolute-value kink are
/// replaced by fresh draws.
pub fn network_grad_check(
    params: &ModelParams<f64>,
    net: &NetConfig,
    weights: &LossWeights,
    views: &[TrainExample<f64>],
    paired: bool,
    coords: usize,
    step: f64,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let analytic = batch_objective(params, net, weights, views, paired, Mode::Eval)?;
    let analytic: Vec<f64> = analytic.grads.iter().flat_map(|t| t.data().iter().copied()).collect();
    let theta = flatten(params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let candidates = sample(&mut rng, theta.len(), theta.len().min(coords.saturating_mul(20))).into_vec();
    let mut scratch = params.clone();
    grad_check_piecewise(
        |flat| {
            unflatten(&mut scratch, flat);
            batch_probe(&scratch, net, weights, views, paired)
        },
        &theta,
        &analytic,
        &candidates,
        coords,
        step,
        tolerance,
        |i| coordinate_label(params, i),
    )
}

/// Settings of the standard gradient check on the tiny network.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub coords: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Seed of the coordinate sample.
    pub seed: u64,
    /// Seed of the parameter initialization.
    pub init_seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            coords: 200,
            step: 1e-3,
            tolerance: 1e-4,
            seed: 1,
            init_seed: 7,
        }
    }
}

/// Checks the Tversky, boundary, contrastive and composite objectives of the tiny
/// network in double precision on two augmented 16×16 image pairs.
pub fn grad_check_suite(opts: &GradCheckOptions) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let net = NetConfig::tiny();
    let params = init_params::<f64>(&net, opts.init_seed)?;
    let synth = SynthConfig {
        image_size: 16,
        lesion_area_range: (0.15, 0.35),
        ..SynthConfig::default()
    };
    let base = LossWeights::default();
    let mut first = Vec::new();
    let mut second = Vec::new();
    for (i, s) in generate_dataset(&synth, 2)?.iter().enumerate() {
        let (a, b) = two_views(s, i as u64, 0.3)?;
        first.push(TrainExample::from_sample(&a, &base)?);
        second.push(TrainExample::from_sample(&b, &base)?);
    }
    first.extend(second);
    let terms = [
        ("tversky", (1.0, 0.0, 0.0)),
        ("boundary", (0.0, 1.0, 0.0)),
        ("contrastive", (0.0, 0.0, 1.0)),
        ("composite", (base.lambda_region, base.lambda_boundary, base.lambda_contrastive)),
    ];
    terms
        .into_iter()
        .map(|(name, (l1, l2, l3))| {
            let w = LossWeights {
                lambda_region: l1,
                lambda_boundary: l2,
                lambda_contrastive: l3,
                ..base.clone()
            };
            let report = network_grad_check(&params, &net, &w, &first, true, opts.coords, opts.step, opts.tolerance, opts.seed)?;
            Ok((name, report))
        })
        .collect()
}
