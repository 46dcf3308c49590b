use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::params::{ALPHA, ETA};
use super::*;
use crate::autograd::kernels;

fn random_map(h: usize, w: usize, c: usize, seed: u64) -> FeatureMap<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(h, w, c, |_, _, _| rng.gen_range(-1.0..1.0))
}

fn tiny() -> (NetConfig, ModelParams<f64>) {
    let cfg = NetConfig::tiny();
    let p = init_params(&cfg, 11).unwrap();
    (cfg, p)
}

/// Adds noise to every parameter whose name satisfies `pick`; returns how many tensors changed.
fn perturb(params: &mut ModelParams<f64>, pick: impl Fn(&str) -> bool, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut n = 0;
    for i in 0..params.len() {
        if pick(params.name(i)) && params.name(i) != ALPHA {
            params.value_mut(i).data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.5..0.5));
            n += 1;
        }
    }
    if pick(ALPHA) {
        params.get_mut(ALPHA).unwrap().data_mut()[0] = 0.9;
        n += 1;
    }
    n
}

fn bits(t: &FeatureMap<f64>) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn shape_closure() {
    let (cfg, p) = tiny();
    for (h, w) in [(4, 4), (8, 12), (16, 32), (20, 8)] {
        let out = forward(&random_map(h, w, 3, 1), &p, &cfg).unwrap();
        assert_eq!(out.logits.shape(), [h, w, 1]);
        assert_eq!(out.probs.shape(), [h, w, 1]);
        assert_eq!(out.artifact_map.shape(), [h, w, 1]);
        assert_eq!(out.boundary_map.shape(), [h, w, cfg.full_channels]);
        assert_eq!(out.latent.len(), cfg.latent_dim);
        let norm: f64 = out.latent.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }
}

#[test]
fn indivisible_input_asks_for_padding() {
    let (cfg, p) = tiny();
    let err = forward(&random_map(10, 8, 3, 1), &p, &cfg).unwrap_err().to_string();
    assert!(err.contains("pad"), "{err}");
}

#[test]
fn output_ranges() {
    let (cfg, p) = tiny();
    let out = forward(&random_map(64, 64, 3, 2).map(|v| v * 3.0), &p, &cfg).unwrap();
    assert!(out.probs.data().iter().all(|&v| v > 0.0 && v < 1.0));
    assert!(out.artifact_map.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn attention_gate_ranges() {
    let cfg = NetConfig::tiny();
    let c = cfg.branch_concat_channels(0);
    for seed in 0..100 {
        let mut p: ModelParams<f64> = init_params(&cfg, seed).unwrap();
        perturb(&mut p, |n| n.starts_with("stage0.ms.ca") || n.starts_with("stage0.ms.sa"), seed);
        let u = random_map(4, 4, c, seed);
        let (s_c, _) = ops::channel_attention(&u, "stage0.ms", &p, &cfg).unwrap();
        assert!(s_c.iter().all(|&v| v > 0.0 && v < 1.0));
        let (m_s, _) = ops::spatial_attention(&u, "stage0.ms", &p, &cfg).unwrap();
        assert!(m_s.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn zero_decoder_gives_half() {
    let (cfg, mut p) = tiny();
    p.zero_prefix("dec.out");
    let out = forward(&random_map(16, 16, 3, 3), &p, &cfg).unwrap();
    assert!(out.logits.data().iter().all(|&v| v == 0.0));
    assert!(out.probs.data().iter().all(|&v| v == 0.5));
}

#[test]
fn deterministic_forward() {
    let (cfg, p) = tiny();
    let x = random_map(16, 16, 3, 4);
    let a = forward(&x, &p, &cfg).unwrap();
    let b = forward(&x, &p, &cfg).unwrap();
    assert_eq!(bits(&a.logits), bits(&b.logits));
    assert_eq!(bits(&a.artifact_map), bits(&b.artifact_map));
    let la: Vec<u64> = a.latent.iter().map(|v| v.to_bits()).collect();
    let lb: Vec<u64> = b.latent.iter().map(|v| v.to_bits()).collect();
    assert_eq!(la, lb);
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let (cfg, p) = tiny();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("model.ckpt");
    Checkpoint { config: cfg.clone(), params: p.clone(), step: 3 }.save(&path).unwrap();
    let back = Checkpoint::<f64>::load(&path).unwrap();
    assert_eq!(back.step, 3);
    let x = random_map(16, 16, 3, 5);
    let a = forward(&x, &p, &cfg).unwrap();
    let b = forward(&x, &back.params, &back.config).unwrap();
    assert_eq!(bits(&a.logits), bits(&b.logits));
    assert_eq!(bits(&a.boundary_map), bits(&b.boundary_map));
}

/// Disabling a branch makes the logits independent of that branch's parameters,
/// while the same perturbation with the branch enabled does change them.
fn check_gate(disable: impl Fn(&mut Toggles), pick: impl Fn(&str) -> bool + Copy) {
    let (mut cfg, p) = tiny();
    let x = random_map(16, 16, 3, 6);
    let mut q = p.clone();
    assert!(perturb(&mut q, pick, 9) > 0);

    let on_a = forward(&x, &p, &cfg).unwrap();
    let on_b = forward(&x, &q, &cfg).unwrap();
    assert_ne!(bits(&on_a.logits), bits(&on_b.logits), "perturbation is not observable");

    disable(&mut cfg.toggles);
    let off_a = forward(&x, &p, &cfg).unwrap();
    let off_b = forward(&x, &q, &cfg).unwrap();
    assert_eq!(bits(&off_a.logits), bits(&off_b.logits));
}

#[test]
fn gate_neutral_suppression() {
    check_gate(|t| t.suppression = false, |n| n.starts_with("artifact.") || n == ALPHA);
}

#[test]
fn gate_neutral_boundary() {
    check_gate(|t| t.boundary = false, |n| n.contains(".edge.") || n == ETA);
}

#[test]
fn gate_neutral_channel_attention() {
    check_gate(|t| t.channel_attention = false, |n| n.contains(".ca1.") || n.contains(".ca2."));
}

#[test]
fn gate_neutral_spatial_attention() {
    check_gate(|t| t.spatial_attention = false, |n| n.contains(".sa."));
}

#[test]
fn gate_neutral_multiscale() {
    check_gate(|t| t.multiscale = false, |n| n.contains(".ms.d"));
}

#[test]
fn boundary_off_gives_zero_map() {
    let (mut cfg, p) = tiny();
    cfg.toggles.boundary = false;
    let out = forward(&random_map(16, 16, 3, 7), &p, &cfg).unwrap();
    assert!(out.boundary_map.data().iter().all(|&v| v == 0.0));
}

#[test]
fn residual_identity() {
    let (cfg, mut p) = tiny();
    for stage in 0..cfg.num_stages {
        p.zero_prefix(&format!("stage{stage}.delta."));
    }
    p.get_mut(ETA).unwrap().data_mut()[0] = 0.0;
    p.get_mut(ALPHA).unwrap().data_mut()[0] = 0.0;
    let mut b = Builder::new(&p, &cfg);
    let x = b.graph.input(random_map(16, 16, 3, 8));
    let n = b.forward(x).unwrap();
    assert_eq!(bits(b.graph.value(n.stem)), bits(b.graph.value(n.r_final)));
}

#[test]
fn zero_eta_hides_edge_head() {
    let (cfg, mut p) = tiny();
    p.get_mut(ETA).unwrap().data_mut()[0] = 0.0;
    let mut q = p.clone();
    perturb(&mut q, |n| n.starts_with("stage0.edge."), 3);
    let r = random_map(16, 16, cfg.full_channels, 1);
    let pooled = random_map(8, 8, cfg.pooled_channels[0], 2);
    let (ra, pa) = ops::frru_step(&r, &pooled, 0, None, &p, &cfg).unwrap();
    let (rb, pb) = ops::frru_step(&r, &pooled, 0, None, &q, &cfg).unwrap();
    assert_eq!(bits(&ra), bits(&rb));
    assert_eq!(bits(&pa), bits(&pb));
    let b = ops::edge_features(&pa, 0, &q, &cfg).unwrap();
    assert!(b.data().iter().any(|&v| v != 0.0));
}

#[test]
fn frru_shapes() {
    let (cfg, p) = tiny();
    let r = random_map(16, 16, cfg.full_channels, 1);
    let pooled = random_map(8, 8, cfg.pooled_channels[0], 2);
    let (r1, p1) = ops::frru_step(&r, &pooled, 0, None, &p, &cfg).unwrap();
    assert_eq!(r1.shape(), [16, 16, cfg.full_channels]);
    assert_eq!(p1.shape(), [8, 8, cfg.pooled_channels[0]]);
    let (r2, p2) = ops::frru_step(&r1, &p1, 1, None, &p, &cfg).unwrap();
    assert_eq!(r2.shape(), [16, 16, cfg.full_channels]);
    assert_eq!(p2.shape(), [4, 4, cfg.pooled_channels[1]]);
}

#[test]
fn zero_channel_attention_halves() {
    let (cfg, mut p) = tiny();
    p.zero_prefix("stage0.ms.ca");
    let c = cfg.branch_concat_channels(0);
    let u = random_map(4, 4, c, 3);
    let (s_c, gated) = ops::channel_attention(&u, "stage0.ms", &p, &cfg).unwrap();
    assert!(s_c.iter().all(|&v| v == 0.5));
    assert_eq!(bits(&gated), bits(&u.map(|v| v * 0.5)));
}

#[test]
fn global_pool_of_constant_channels() {
    let u: Tensor<f64> = Tensor::from_fn(3, 5, 2, |_, _, c| if c == 0 { 0.3 } else { -1.7 });
    let g = kernels::global_avg_pool(&u);
    assert!((g.data()[0] - 0.3).abs() < 1e-15);
    assert!((g.data()[1] + 1.7).abs() < 1e-15);
}

#[test]
fn channel_attention_hand_example() {
    let cfg = NetConfig::tiny();
    let mut p = ModelParams::new();
    p.insert("t.ca1.w", Tensor::from_vec(&[1, 1, 2, 1], vec![0.4, -0.2]).unwrap()).unwrap();
    p.insert("t.ca1.b", Tensor::from_vec(&[1], vec![0.1]).unwrap()).unwrap();
    p.insert("t.ca2.w", Tensor::from_vec(&[1, 1, 1, 2], vec![0.5, -1.0]).unwrap()).unwrap();
    p.insert("t.ca2.b", Tensor::zeros(&[2])).unwrap();
    // channel means 2.5 and 0.5; hidden = relu(0.4·2.5 − 0.2·0.5 + 0.1) = 1
    let u = Tensor::from_vec(&[2, 2, 2], vec![1.0, 0.0, 2.0, 0.0, 3.0, 1.0, 4.0, 1.0]).unwrap();
    let (s_c, gated) = ops::channel_attention(&u, "t", &p, &cfg).unwrap();
    let want: [f64; 2] = [0.6224593312018546, 0.2689414213699951];
    for (a, b) in s_c.iter().zip(want) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!((gated.at(1, 1, 0) - 4.0 * want[0]).abs() < 1e-15);
    assert!((gated.at(1, 0, 1) - want[1]).abs() < 1e-15);
}

#[test]
fn spatial_attention_zero_and_product() {
    let cfg = NetConfig::tiny();
    let mut p = ModelParams::new();
    p.insert("t.sa.w", Tensor::zeros(&[3, 3, 2, 1])).unwrap();
    p.insert("t.sa.b", Tensor::zeros(&[1])).unwrap();
    let u = random_map(3, 3, 2, 4);
    let (m, out) = ops::spatial_attention(&u, "t", &p, &cfg).unwrap();
    assert!(m.data().iter().all(|&v| v == 0.5));
    assert_eq!(bits(&out), bits(&u.map(|v| v * 0.5)));

    p.get_mut("t.sa.b").unwrap().data_mut()[0] = 0.3;
    p.get_mut("t.sa.w").unwrap().data_mut()[4 * 2] = 1.0;
    let (m, out) = ops::spatial_attention(&u, "t", &p, &cfg).unwrap();
    for y in 0..3 {
        for x in 0..3 {
            let want_m = crate::scalar::sigmoid(u.at(y, x, 0) + 0.3);
            assert!((m.at(y, x, 0) - want_m).abs() < 1e-15);
            for c in 0..2 {
                assert_eq!(out.at(y, x, c), u.at(y, x, c) * m.at(y, x, 0));
            }
        }
    }
}

#[test]
fn artifact_head_zero_weights() {
    let (cfg, mut p) = tiny();
    p.zero_prefix("artifact.conv2");
    let a = ops::artifact_map(&random_map(8, 8, cfg.full_channels, 1), &p, &cfg).unwrap();
    assert_eq!(a.shape(), [8, 8, 1]);
    assert!(a.data().iter().all(|&v| v == 0.5));
}

#[test]
fn suppress_examples() {
    let r = random_map(4, 4, 3, 1);
    let zeros = Tensor::zeros(&[4, 4, 1]);
    let ones = Tensor::full(&[4, 4, 1], 1.0);
    let halves = Tensor::full(&[4, 4, 1], 0.5);
    assert_eq!(bits(&ops::suppress(&r, &zeros, 0.7).unwrap()), bits(&r));
    assert!(ops::suppress(&r, &ones, 1.0).unwrap().data().iter().all(|&v| v == 0.0));
    let q = ops::suppress(&r, &halves, 0.5).unwrap();
    for (a, b) in q.data().iter().zip(r.data()) {
        assert!((a - 0.75 * b).abs() < 1e-15);
    }
    assert!(ops::suppress(&r, &halves, 1.5).unwrap_err().is_usage());
}

#[test]
fn suppression_toggle_is_identity() {
    let (mut cfg, mut p) = tiny();
    cfg.toggles.suppression = false;
    p.get_mut(ALPHA).unwrap().data_mut()[0] = 1.0;
    let mut b = Builder::new(&p, &cfg);
    let r = b.graph.input(random_map(4, 4, cfg.full_channels, 2));
    let a = b.graph.input(Tensor::full(&[4, 4, 1], 1.0));
    let out = b.suppress(r, a).unwrap();
    assert_eq!(out, r);
}

#[test]
fn constant_input_has_no_interior_edges() {
    let (cfg, p) = tiny();
    let x = Tensor::full(&[6, 6, cfg.pooled_channels[0]], 0.8);
    let e = ops::edge_response(&x, "stage0.edge", &p, &cfg).unwrap();
    for y in 1..5 {
        for xx in 1..5 {
            for c in 0..e.hwc().2 {
                assert_eq!(e.at(y, xx, c), 0.0);
            }
        }
    }
}

#[test]
fn step_edge_response_localized() {
    let cfg = NetConfig::tiny();
    let mut p = ModelParams::new();
    let mut dx = Tensor::zeros(&[3, 3, 1]);
    dx.set(1, 0, 0, -1.0);
    dx.set(1, 2, 0, 1.0);
    let mut dy = Tensor::zeros(&[3, 3, 1]);
    dy.set(0, 1, 0, -1.0);
    dy.set(2, 1, 0, 1.0);
    p.insert("t.dx", dx).unwrap();
    p.insert("t.dy", dy).unwrap();
    let x = Tensor::from_fn(8, 8, 1, |_, xx, _| if xx >= 4 { 1.0 } else { 0.0 });
    let e = ops::edge_response(&x, "t", &p, &cfg).unwrap();
    // Hand convolution: gx(y, x) = x(y, x+1) − x(y, x−1), gy = x(y+1, x) − x(y−1, x).
    for y in 1..7 {
        for xx in 1..7 {
            let want = if xx == 3 || xx == 4 { 1.0 } else { 0.0 };
            assert_eq!(e.at(y, xx, 0), want, "gx at ({y},{xx})");
            assert_eq!(e.at(y, xx, 1), 0.0, "gy at ({y},{xx})");
        }
    }
}

#[test]
fn edge_features_shape() {
    let (cfg, p) = tiny();
    let b = ops::edge_features(&random_map(4, 4, cfg.pooled_channels[1], 1), 1, &p, &cfg).unwrap();
    assert_eq!(b.shape(), [16, 16, cfg.full_channels]);
}

#[test]
fn transposed_upsampling_variant() {
    let mut cfg = NetConfig::tiny();
    cfg.up_mode = UpMode::Transposed;
    let p: ModelParams<f64> = init_params(&cfg, 2).unwrap();
    let out = forward(&random_map(16, 16, 3, 1), &p, &cfg).unwrap();
    assert_eq!(out.probs.shape(), [16, 16, 1]);
}

#[test]
fn single_and_double_precision_agree() {
    let (cfg, p) = tiny();
    let x = random_map(16, 16, 3, 9);
    let a = forward(&x, &p, &cfg).unwrap();
    let b = forward(&x.cast::<f32>(), &p.cast::<f32>(), &cfg).unwrap();
    for (u, v) in a.probs.data().iter().zip(b.probs.data()) {
        assert!((u - *v as f64).abs() < 1e-4);
    }
}

/// Per-layer closed forms, independent of the layout code.
fn expected_scalars(c: &NetConfig) -> usize {
    let conv = |k: usize, ci: usize, co: usize| k * k * ci * co + co;
    let norm = |ch: usize| 2 * ch;
    let separable = |ci: usize, co: usize| (9 * ci + ci) + conv(1, ci, co) + norm(co);
    let attention = |ch: usize| {
        let h = (ch / c.attention_reduction).max(1);
        conv(1, ch, h) + conv(1, h, ch) + conv(3, ch, 1)
    };
    let cr = c.full_channels;
    let mut n = conv(3, 3, cr) + norm(cr);
    n += conv(c.pooled_scales[0], cr, c.pooled_channels[0]) + norm(c.pooled_channels[0]);
    n += conv(3, cr, cr) + conv(1, cr, 1) + 2;
    for s in 0..c.num_stages {
        let cp = c.pooled_channels[s];
        let prev = c.pooled_channels[s.saturating_sub(1)];
        let cin = cp + prev;
        let cu = cp * c.dilation_rates.len();
        if s > 0 && c.pooled_scales[s] > c.pooled_scales[s - 1] {
            n += conv(c.pooled_scales[s] / c.pooled_scales[s - 1], prev, prev) + norm(prev);
        }
        n += conv(1, cr, cp);
        n += c.dilation_rates.len() * separable(cin, cp) + separable(cin, cu);
        n += attention(cu) + conv(1, cu, cp);
        n += conv(1, cp, cr) + conv(3, cr, cr);
        n += 2 * 9 * cp + conv(1, 2 * cp, cp) + conv(1, cp, cr) + conv(3, cr, cr);
    }
    n += separable(cr, cr) + attention(cr) + conv(1, cr, 1);
    let cl = c.pooled_channels[c.num_stages - 1];
    n + conv(1, cl, cl) + conv(1, cl, c.latent_dim)
}

#[test]
fn parameter_count_closed_form() {
    let tiny = NetConfig::tiny();
    assert_eq!(expected_scalars(&tiny), 22_241);
    assert_eq!(init_params::<f64>(&tiny, 0).unwrap().scalar_count(), 22_241);
    let full = NetConfig::default();
    assert_eq!(init_params::<f32>(&full, 0).unwrap().scalar_count(), expected_scalars(&full));
}

#[test]
fn downsample_shapes() {
    let (cfg, p) = tiny();
    let d = ops::downsample_full(&random_map(64, 64, 8, 1), 1, &p, &cfg).unwrap();
    assert_eq!(d.shape(), [16, 16, cfg.pooled_channels[1]]);

    let unit = NetConfig {
        pooled_scales: vec![1, 2],
        working_size: 16,
        ..NetConfig::tiny()
    };
    let q = init_params::<f64>(&unit, 1).unwrap();
    let d = ops::downsample_full(&random_map(12, 8, 8, 1), 0, &q, &unit).unwrap();
    assert_eq!(d.shape(), [12, 8, unit.pooled_channels[0]]);
}

#[test]
fn averaging_preserves_constants() {
    let cfg = NetConfig {
        full_channels: 4,
        pooled_channels: vec![4, 4],
        ..NetConfig::tiny()
    };
    let mut p = init_params::<f64>(&cfg, 1).unwrap();
    p.zero_prefix("stage0.down");
    let w = p.get_mut("stage0.down.w").unwrap().data_mut();
    for c in 0..4 {
        w[c * 4 + c] = 1.0;
    }
    let x = Tensor::full(&[8, 8, 4], 0.37);
    let d = ops::downsample_full(&x, 0, &p, &cfg).unwrap();
    assert_eq!(d.shape(), [4, 4, 4]);
    assert!(d.data().iter().all(|&v| (v - 0.37).abs() < 1e-15));
}

#[test]
fn multiscale_block_maps_zero_to_zero() {
    let (cfg, p) = tiny();
    let x = Tensor::zeros(&[8, 8, cfg.block_in_channels(0)]);
    let y = ops::multiscale_block(&x, 0, &p, &cfg).unwrap();
    assert_eq!(y.shape(), [8, 8, cfg.pooled_channels[0]]);
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn dilated_branch_receptive_field() {
    let mut x = Tensor::<f64>::zeros(&[21, 21, 1]);
    x.set(10, 10, 0, 1.0);
    let w = Tensor::full(&[3, 3, 1], 1.0);
    let y = kernels::depthwise(&x, &w, None, kernels::ConvSpec::same(3, 4));
    let support: Vec<(usize, usize)> = (0..21 * 21)
        .map(|i| (i / 21, i % 21))
        .filter(|&(r, c)| y.at(r, c, 0) != 0.0)
        .collect();
    let rows = support.iter().map(|p| p.0);
    let cols = support.iter().map(|p| p.1);
    assert_eq!((rows.clone().min(), rows.max()), (Some(6), Some(14)));
    assert_eq!((cols.clone().min(), cols.max()), (Some(6), Some(14)));
    assert_eq!(support.len(), 9);
}
