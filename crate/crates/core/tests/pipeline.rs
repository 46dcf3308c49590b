use std::path::PathBuf;

use drseg::losses::LossWeights;
use drseg::network::checkpoint::Checkpoint;
use drseg::network::{init_params, NetConfig};
use drseg::pipeline::*;
use drseg::synthdata::{generate_dataset, Sample, SynthConfig};
use drseg::Tensor;

fn small_set(n: usize, size: usize, seed: u64) -> Vec<Sample> {
    let cfg = SynthConfig {
        image_size: size,
        lesion_area_range: (0.15, 0.35),
        images_per_patient: 1,
        seed,
        ..SynthConfig::default()
    };
    generate_dataset(&cfg, n).unwrap()
}

fn short_config() -> TrainConfig {
    TrainConfig {
        initial_lr: 3e-3,
        batch_size: 2,
        max_steps: 6,
        val_fraction: 0.0,
        augment_strength: 0.3,
        net: NetConfig::tiny(),
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_reproducible() {
    let data = small_set(4, 16, 3);
    let cfg = short_config();
    assert!(cfg.loss.lambda_contrastive > 0.0);
    let a = train::<f32>(&cfg, &data).unwrap();
    let b = train::<f32>(&cfg, &data).unwrap();
    assert_eq!(a.steps.len(), cfg.max_steps);
    assert_eq!(a.steps, b.steps);
    assert_eq!(a.checkpoint.to_bytes().unwrap(), b.checkpoint.to_bytes().unwrap());
    assert_eq!(a.status, TrainStatus::Completed);
}

#[test]
fn different_seeds_differ() {
    let data = small_set(4, 16, 3);
    let cfg = short_config();
    let other = TrainConfig { seed: 1, ..cfg.clone() };
    let a = train::<f32>(&cfg, &data).unwrap();
    let b = train::<f32>(&other, &data).unwrap();
    assert_ne!(a.steps, b.steps);
}

#[test]
fn learning_rate_follows_schedule() {
    let data = small_set(4, 16, 3);
    let cfg = short_config();
    let out = train::<f32>(&cfg, &data).unwrap();
    for s in &out.steps {
        assert_eq!(s.lr, cosine_lr(s.step, cfg.max_steps, cfg.initial_lr, cfg.min_lr));
    }
    assert!(out.steps.windows(2).all(|w| w[1].lr <= w[0].lr));
}

#[test]
fn split_keeps_patients_apart() {
    let cfg = SynthConfig {
        image_size: 16,
        images_per_patient: 3,
        ..SynthConfig::default()
    };
    let data = generate_dataset(&cfg, 30).unwrap();
    let (train_idx, val_idx) = patient_split(&data, 0.3, 0);
    assert_eq!(train_idx.len() + val_idx.len(), 30);
    assert_eq!(val_idx.len(), 9);
    for &v in &val_idx {
        assert!(train_idx.iter().all(|&t| data[t].patient_id != data[v].patient_id));
    }
    let (t, v) = patient_split(&data[..3], 0.9, 0);
    assert_eq!((t.len(), v.len()), (3, 0));
}

#[test]
fn early_stopping_returns_the_best_checkpoint() {
    let cfg = SynthConfig {
        image_size: 16,
        lesion_area_range: (0.15, 0.35),
        images_per_patient: 2,
        seed: 5,
        ..SynthConfig::default()
    };
    let data = generate_dataset(&cfg, 12).unwrap();
    let train_cfg = TrainConfig {
        initial_lr: 1e-2,
        batch_size: 4,
        max_steps: 40,
        val_fraction: 0.34,
        early_stop_patience: 2,
        augment_strength: 0.5,
        net: NetConfig::tiny(),
        ..TrainConfig::default()
    };
    let out = train::<f32>(&train_cfg, &data).unwrap();
    let seen: Vec<f64> = out.epochs.iter().filter_map(|e| e.val_iou).collect();
    assert_eq!(seen.len(), out.epochs.len());
    let best = seen.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(out.best_val_iou, Some(best));

    let (_, val_idx) = patient_split(&data, train_cfg.val_fraction, train_cfg.seed);
    let val: Vec<Sample> = val_idx.iter().map(|&i| data[i].clone()).collect();
    let (_, iou) = mean_dice_iou(&out.checkpoint.params, &train_cfg, &val).unwrap();
    assert_eq!(iou, best);
    if let TrainStatus::EarlyStopped { epoch } = out.status {
        assert_eq!(epoch + 1, out.epochs.len());
    }
}

#[test]
fn divergence_keeps_finite_parameters() {
    let data = small_set(4, 16, 3);
    let cfg = TrainConfig {
        initial_lr: 1e30,
        max_steps: 20,
        ..short_config()
    };
    let out = train::<f32>(&cfg, &data).unwrap();
    match &out.status {
        TrainStatus::Diverged { step, .. } => assert_eq!(*step, out.steps.len()),
        s => panic!("expected divergence, got {s:?}"),
    }
    assert!(out.checkpoint.params.iter().all(|(_, t)| t.data().iter().all(|v| v.is_finite())));
}

#[test]
fn contrastive_needs_two_training_images() {
    let data = small_set(1, 16, 3);
    let err = train::<f32>(&short_config(), &data).unwrap_err();
    assert!(err.is_usage(), "{err}");
    assert!(train::<f32>(&short_config(), &[]).is_err());
}

#[test]
fn self_comparison_is_null() {
    let data = small_set(6, 16, 9);
    let net = NetConfig::tiny();
    let params = init_params::<f32>(&net, 2).unwrap();
    let records = score(&params, &net, &data, &EvalOptions::default()).unwrap();
    let rows = compare(&records, &records, 500, 0.95, 0).unwrap();
    assert_eq!(rows.len(), 4);
    for c in &rows {
        assert_eq!(c.n, 6);
        assert_eq!((c.ci.mean_diff, c.ci.ci_low, c.ci.ci_high), (0.0, 0.0, 0.0));
        assert_eq!(c.ci.p_value, 1.0);
        assert_eq!(c.ttest.p_value, 1.0);
    }
    let md = comparison_markdown(&rows);
    assert_eq!(md.lines().count(), 6);
}

#[test]
fn comparison_requires_matching_images() {
    let data = small_set(4, 16, 9);
    let net = NetConfig::tiny();
    let params = init_params::<f32>(&net, 2).unwrap();
    let records = score(&params, &net, &data, &EvalOptions::default()).unwrap();
    assert!(compare(&records, &records[..3], 100, 0.95, 0).is_err());
}

#[test]
fn evaluation_table_has_the_standard_columns() {
    let data = small_set(6, 16, 2);
    let net = NetConfig::tiny();
    let ckpt = Checkpoint {
        params: init_params::<f32>(&net, 4).unwrap(),
        config: net,
        step: 0,
    };
    let eval = evaluate(&ckpt, &data, &EvalOptions::default()).unwrap();
    assert_eq!(eval.records.len(), 6);
    let csv = eval.table.to_csv(false).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("Group,Model,DC,IoU,Precision,Recall"));
    assert!(lines.next().unwrap().starts_with("Overall,ours,"));
    let again = evaluate(&ckpt, &data, &EvalOptions::default()).unwrap();
    assert_eq!(again.table.to_csv(false).unwrap(), csv);
}

#[test]
fn evaluation_rejects_a_mismatched_checkpoint() {
    let data = small_set(2, 16, 2);
    let mut ckpt = Checkpoint {
        params: init_params::<f32>(&NetConfig::tiny(), 4).unwrap(),
        config: NetConfig::tiny(),
        step: 0,
    };
    ckpt.config.latent_dim += 1;
    assert!(evaluate(&ckpt, &data, &EvalOptions::default()).is_err());
}

fn write_png(path: &std::path::Path, img: &Tensor<f32>) {
    let (h, w, _) = img.hwc();
    let out = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |k| (img.at(y as usize, x as usize, k) * 255.0).round() as u8;
        image::Rgb([px(0), px(1), px(2)])
    });
    out.save(path).unwrap();
}

#[test]
fn inference_keeps_input_size_and_survives_bad_files() {
    let tmp = tempfile::tempdir().unwrap();
    let net = NetConfig::tiny();
    let ckpt = Checkpoint {
        params: init_params::<f32>(&net, 4).unwrap(),
        config: net,
        step: 0,
    };
    let data = small_set(1, 32, 1);
    let crop = Tensor::from_fn(21, 30, 3, |y, x, k| data[0].image.at(y, x, k));
    let good = tmp.path().join("odd.png");
    write_png(&good, &crop);
    let bad = tmp.path().join("broken.png");
    std::fs::write(&bad, b"not an image").unwrap();
    let missing = tmp.path().join("missing.png");
    let out_dir = tmp.path().join("masks");
    let paths: Vec<PathBuf> = vec![bad.clone(), good.clone(), missing];

    let outcomes = infer(&ckpt, &paths, &out_dir, &EvalOptions::default()).unwrap();
    assert_eq!(outcomes.len(), 3);
    assert!(outcomes[0].result.is_err());
    assert!(outcomes[2].result.is_err());
    let written = outcomes[1].result.clone().unwrap();
    assert_eq!(written, out_dir.join("odd.png"));
    let mask = image::open(&written).unwrap().to_luma8();
    assert_eq!(mask.dimensions(), (30, 21));
    assert!(mask.pixels().all(|p| p.0[0] == 0 || p.0[0] == 255));

    let first = std::fs::read(&written).unwrap();
    infer(&ckpt, &[good], &out_dir, &EvalOptions::default()).unwrap();
    assert_eq!(std::fs::read(&written).unwrap(), first);
}

fn flip(v: &[f64], h: usize, w: usize, horizontal: bool) -> Vec<f64> {
    (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            if horizontal {
                v[y * w + w - 1 - x]
            } else {
                v[(h - 1 - y) * w + x]
            }
        })
        .collect()
}

#[test]
fn tta_averages_flipped_passes() {
    let net = NetConfig::tiny();
    let params = init_params::<f64>(&net, 8).unwrap();
    let img = small_set(1, 16, 4).remove(0).image;
    let (h, w, _) = img.hwc();
    let plain = predict_probs(&params, &net, &img, false).unwrap();
    let hflip = Tensor::from_fn(h, w, 3, |y, x, k| img.at(y, w - 1 - x, k));
    let vflip = Tensor::from_fn(h, w, 3, |y, x, k| img.at(h - 1 - y, x, k));
    let ph = flip(&predict_probs(&params, &net, &hflip, false).unwrap(), h, w, true);
    let pv = flip(&predict_probs(&params, &net, &vflip, false).unwrap(), h, w, false);
    let tta = predict_probs(&params, &net, &img, true).unwrap();
    for i in 0..h * w {
        let want = (plain[i] + ph[i] + pv[i]) / 3.0;
        assert!((tta[i] - want).abs() < 1e-12);
    }
}

#[test]
fn tta_is_neutral_for_symmetric_inputs_and_outputs() {
    let net = NetConfig::tiny();
    let mut params = init_params::<f64>(&net, 8).unwrap();
    params.zero_prefix("dec.out");
    // Symmetric under both flips.
    let img = Tensor::from_fn(16, 16, 3, |y, x, k| {
        let d = (y.min(15 - y) + x.min(15 - x)) as f32;
        0.2 + 0.04 * d + 0.1 * k as f32
    });
    let opts = EvalOptions::default();
    let with_tta = EvalOptions { tta: true, ..opts.clone() };
    assert_eq!(
        segment(&params, &net, &img, &opts).unwrap(),
        segment(&params, &net, &img, &with_tta).unwrap()
    );
    assert_eq!(
        predict_probs(&params, &net, &img, false).unwrap(),
        predict_probs(&params, &net, &img, true).unwrap()
    );
}

#[test]
fn single_pixel_images_are_padded() {
    let net = NetConfig::tiny();
    let params = init_params::<f32>(&net, 1).unwrap();
    let img = Tensor::from_fn(1, 1, 3, |_, _, _| 0.5f32);
    let p = predict_probs(&params, &net, &img, true).unwrap();
    assert_eq!(p.len(), 1);
    assert!(p[0] > 0.0 && p[0] < 1.0);
}

#[test]
fn rgb_is_required() {
    let net = NetConfig::tiny();
    let params = init_params::<f32>(&net, 1).unwrap();
    let img = Tensor::from_fn(8, 8, 1, |_, _, _| 0.5f32);
    assert!(predict_probs(&params, &net, &img, false).is_err());
}

#[test]
fn region_only_objective_skips_pairing() {
    let data = small_set(3, 16, 3);
    let cfg = TrainConfig {
        batch_size: 1,
        max_steps: 3,
        augment_strength: 0.0,
        loss: LossWeights {
            lambda_boundary: 0.0,
            lambda_contrastive: 0.0,
            ..LossWeights::default()
        },
        ..short_config()
    };
    let out = train::<f32>(&cfg, &data).unwrap();
    assert_eq!(out.steps.len(), 3);
    assert!(out.steps.iter().all(|s| s.loss == s.region && s.contrastive == 0.0));
}
