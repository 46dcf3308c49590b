use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::checkpoint::Checkpoint;
use crate::network::{init_params, ModelParams};
use crate::scalar::Scalar;
use crate::synthdata::{augment, child_seed, two_views, Sample};

use super::evaluate::{score, EvalOptions};
use super::objective::{batch_objective, Mode, TrainExample};
use super::optim::{adamw_step, cosine_lr, AdamHyper, AdamState};
use super::TrainConfig;

const SHUFFLE_STREAM: u64 = 1;
const AUGMENT_STREAM: u64 = 2;
const DROPOUT_STREAM: u64 = 3;
const SPLIT_STREAM: u64 = 4;
const INIT_STREAM: u64 = 5;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub region: f64,
    pub boundary: f64,
    pub contrastive: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Steps completed at the end of the epoch.
    pub step: usize,
    pub train_loss: f64,
    pub val_dice: Option<f64>,
    pub val_iou: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrainStatus {
    Completed,
    EarlyStopped { epoch: usize },
    Diverged { step: usize, reason: String },
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    /// Best-validation parameters, or the final ones when nothing is held out.
    /// After divergence, the last parameters that produced a finite loss.
    pub checkpoint: Checkpoint<T>,
    pub best_val_iou: Option<f64>,
    pub steps: Vec<StepLog>,
    pub epochs: Vec<EpochLog>,
    pub status: TrainStatus,
}

/// Splits sample indices into `(train, val)` so that no patient appears in both.
/// At least one patient stays in training.
pub fn patient_split(samples: &[Sample], val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut patients: Vec<&str> = Vec::new();
    for s in samples {
        if !patients.contains(&s.patient_id.as_str()) {
            patients.push(&s.patient_id);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, SPLIT_STREAM));
    patients.shuffle(&mut rng);
    let n_val = ((patients.len() as f64 * val_fraction).round() as usize).min(patients.len().saturating_sub(1));
    let val_patients = &patients[..n_val];
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, s) in samples.iter().enumerate() {
        if val_patients.contains(&s.patient_id.as_str()) {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    (train, val)
}

fn mean_of(records: &[crate::metrics::SegRecord], key: &str) -> f64 {
    records.iter().map(|r| r.metrics[key]).sum::<f64>() / records.len() as f64
}

/// Mean Dice and IoU of `params` on `samples` (threshold 0.5, no post-processing).
pub fn mean_dice_iou<T: Scalar>(params: &ModelParams<T>, cfg: &TrainConfig, samples: &[Sample]) -> Result<(f64, f64)> {
    let records = score(params, &cfg.net, samples, &EvalOptions::default())?;
    Ok((mean_of(&records, "dice"), mean_of(&records, "iou")))
}

fn make_views<T: Scalar>(cfg: &TrainConfig, batch: &[&Sample], step: usize, paired: bool) -> Result<Vec<TrainExample<T>>> {
    let aug_seed = child_seed(cfg.seed, AUGMENT_STREAM);
    let strength = cfg.augment_strength;
    let mut first = Vec::with_capacity(batch.len());
    let mut second = Vec::new();
    for (j, s) in batch.iter().enumerate() {
        let seed = child_seed(aug_seed, (step * cfg.batch_size + j) as u64);
        if paired {
            let (a, b) = two_views(s, seed, strength)?;
            first.push(TrainExample::from_sample(&a, &cfg.loss)?);
            second.push(TrainExample::from_sample(&b, &cfg.loss)?);
        } else if strength > 0.0 {
            first.push(TrainExample::from_sample(&augment(s, seed, strength)?, &cfg.loss)?);
        } else {
            first.push(TrainExample::from_sample(s, &cfg.loss)?);
        }
    }
    first.extend(second);
    Ok(first)
}

/// Trains from a seeded initialization. Results depend only on the config and
/// the dataset order.
pub fn train<T: Scalar>(cfg: &TrainConfig, dataset: &[Sample]) -> Result<TrainOutcome<T>> {
    let params = init_params::<T>(&cfg.net, child_seed(cfg.seed, INIT_STREAM))?;
    train_from(cfg, dataset, params)
}

/// Trains starting from the given parameters.
pub fn train_from<T: Scalar>(cfg: &TrainConfig, dataset: &[Sample], mut params: ModelParams<T>) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Param("training dataset is empty".into()));
    }
    let (train_idx, val_idx) = patient_split(dataset, cfg.val_fraction, cfg.seed);
    let paired = cfg.loss.lambda_contrastive > 0.0;
    if paired && train_idx.len() < 2 {
        return Err(Error::config(
            "lambda_contrastive",
            "the contrastive term needs at least two training images",
        ));
    }
    let val: Vec<Sample> = val_idx.iter().map(|&i| dataset[i].clone()).collect();
    let mut state = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(cfg.seed, SHUFFLE_STREAM));
    let dropout_seed = child_seed(cfg.seed, DROPOUT_STREAM);
    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    let mut best: Option<(f64, ModelParams<T>, usize)> = None;
    let mut stale = 0;
    let mut status = TrainStatus::Completed;
    let mut step = 0;
    let mut epoch = 0;
    'outer: while step < cfg.max_steps {
        let mut order = train_idx.clone();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_steps = 0;
        for chunk in order.chunks(cfg.batch_size) {
            if step >= cfg.max_steps {
                break;
            }
            if paired && chunk.len() < 2 {
                continue;
            }
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &dataset[i]).collect();
            let views = make_views::<T>(cfg, &batch, step, paired)?;
            let lr = cosine_lr(step, cfg.max_steps, cfg.initial_lr, cfg.min_lr);
            let out = match batch_objective(&params, &cfg.net, &cfg.loss, &views, paired, Mode::Train(child_seed(dropout_seed, step as u64))) {
                Ok(out) => out,
                Err(Error::NonFinite { name }) => {
                    status = TrainStatus::Diverged {
                        step,
                        reason: format!("non-finite {name}"),
                    };
                    break 'outer;
                }
                Err(e) => return Err(e),
            };
            if !out.total.is_finite() {
                status = TrainStatus::Diverged {
                    step,
                    reason: format!("loss is {}", out.total),
                };
                break 'outer;
            }
            match adamw_step(&mut params, &out.grads, &mut state, lr, cfg.weight_decay, AdamHyper::default()) {
                Ok(()) => {}
                Err(Error::NonFinite { name }) => {
                    status = TrainStatus::Diverged {
                        step,
                        reason: format!("non-finite {name}"),
                    };
                    break 'outer;
                }
                Err(e) => return Err(e),
            }
            log::debug!("step {step} lr {lr:.3e} loss {:.5}", out.total);
            steps.push(StepLog {
                step,
                lr,
                loss: out.total,
                region: out.components.region,
                boundary: out.components.boundary,
                contrastive: out.components.contrastive,
            });
            epoch_loss += out.total;
            epoch_steps += 1;
            step += 1;
        }
        let (val_dice, val_iou) = if val.is_empty() {
            (None, None)
        } else {
            let (d, i) = mean_dice_iou(&params, cfg, &val)?;
            (Some(d), Some(i))
        };
        epochs.push(EpochLog {
            epoch,
            step,
            train_loss: if epoch_steps > 0 { epoch_loss / epoch_steps as f64 } else { f64::NAN },
            val_dice,
            val_iou,
        });
        log::info!("epoch {epoch} step {step} val_iou {val_iou:?}");
        if let Some(iou) = val_iou {
            if best.as_ref().map_or(true, |b| iou > b.0) {
                best = Some((iou, params.clone(), step));
                stale = 0;
            } else {
                stale += 1;
                if cfg.early_stop_patience > 0 && stale >= cfg.early_stop_patience {
                    status = TrainStatus::EarlyStopped { epoch };
                    break;
                }
            }
        }
        epoch += 1;
    }
    let best_val_iou = best.as_ref().map(|b| b.0);
    let (params, at) = match best {
        Some((_, p, s)) => (p, s),
        None => (params, step),
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: cfg.net.clone(),
            params,
            step: at as u64,
        },
        best_val_iou,
        steps,
        epochs,
        status,
    })
}
