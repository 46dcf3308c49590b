use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMap;
use crate::metrics::{
    bootstrap_ci, image_metrics, paired_t, stratified_report, CIResult, GroupKey, ReportTable, SegRecord,
    TTestResult, DEFAULT_BF_TOLERANCE,
};
use crate::network::checkpoint::Checkpoint;
use crate::network::postprocess::postprocess;
use crate::network::{forward, normalize_image, ModelParams, NetConfig};
use crate::scalar::Scalar;
use crate::synthdata::Sample;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub threshold: f64,
    pub tta: bool,
    /// Connected components below this area are removed; 0 keeps everything.
    pub min_area: i64,
    /// Radius of the morphological closing; 0 skips it.
    pub closing_radius: i64,
    pub bf_tolerance: f64,
    /// Model name used in the report rows.
    pub model: String,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            threshold: 0.5,
            tta: false,
            min_area: 0,
            closing_radius: 0,
            bf_tolerance: DEFAULT_BF_TOLERANCE,
            model: "ours".into(),
        }
    }
}

fn reflect(i: usize, n: usize) -> usize {
    if i < n {
        return i;
    }
    let period = 2 * n.saturating_sub(1);
    if period == 0 {
        return 0;
    }
    let k = i % period;
    if k < n {
        k
    } else {
        period - k
    }
}

fn flip_map(v: &[f64], h: usize, w: usize, horizontal: bool) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = if horizontal { (y, w - 1 - x) } else { (h - 1 - y, x) };
            out[y * w + x] = v[sy * w + sx];
        }
    }
    out
}

fn flip_rgb(img: &Tensor<f32>, horizontal: bool) -> Tensor<f32> {
    let (h, w, c) = img.hwc();
    Tensor::from_fn(h, w, c, |y, x, k| {
        if horizontal {
            img.at(y, w - 1 - x, k)
        } else {
            img.at(h - 1 - y, x, k)
        }
    })
}

fn probs_once<T: Scalar>(params: &ModelParams<T>, net: &NetConfig, image: &Tensor<f32>) -> Result<Vec<f64>> {
    let (h, w, c) = image.hwc();
    if c != 3 {
        return Err(Error::Shape(format!("expected an RGB image, got {c} channels")));
    }
    let s = net.max_scale();
    let (ph, pw) = (h.div_ceil(s) * s, w.div_ceil(s) * s);
    let padded = if (ph, pw) == (h, w) {
        image.clone()
    } else {
        Tensor::from_fn(ph, pw, 3, |y, x, k| image.at(reflect(y, h), reflect(x, w), k))
    };
    let input = normalize_image::<T>(padded.data(), ph, pw)?;
    let out = forward(&input, params, net)?;
    let p = out.probs.data();
    let mut cropped = Vec::with_capacity(h * w);
    for y in 0..h {
        cropped.extend(p[y * pw..y * pw + w].iter().map(|v| v.to_f64_lossy()));
    }
    Ok(cropped)
}

/// Foreground probabilities of an RGB image in `[0, 1]`. Sizes that are not a
/// multiple of the largest pooled scale are reflect-padded and cropped back.
/// With `tta`, the maps of the identity and both flips are averaged.
pub fn predict_probs<T: Scalar>(params: &ModelParams<T>, net: &NetConfig, image: &Tensor<f32>, tta: bool) -> Result<Vec<f64>> {
    let mut p = probs_once(params, net, image)?;
    if tta {
        let (h, w, _) = image.hwc();
        for horizontal in [true, false] {
            let q = probs_once(params, net, &flip_rgb(image, horizontal))?;
            let q = flip_map(&q, h, w, horizontal);
            p.iter_mut().zip(q).for_each(|(a, b)| *a += b);
        }
        p.iter_mut().for_each(|v| *v /= 3.0);
    }
    Ok(p)
}

/// Thresholded and optionally post-processed prediction.
pub fn segment<T: Scalar>(params: &ModelParams<T>, net: &NetConfig, image: &Tensor<f32>, opts: &EvalOptions) -> Result<BinaryMap> {
    let (h, w, _) = image.hwc();
    let p = predict_probs(params, net, image, opts.tta)?;
    let mask = BinaryMap::from_vec(h, w, p.iter().map(|&v| v >= opts.threshold).collect())?;
    postprocess(&mask, opts.min_area, opts.closing_radius)
}

fn record_for(sample: &Sample, pred: &BinaryMap, opts: &EvalOptions) -> Result<SegRecord> {
    let m = image_metrics(pred, &sample.mask, opts.bf_tolerance)?;
    let mut metrics = BTreeMap::new();
    for (k, v) in [("dice", m.dice), ("iou", m.iou), ("precision", m.precision), ("recall", m.recall), ("bf", m.bf)] {
        metrics.insert(k.to_string(), v);
    }
    if let Some(a) = m.assd {
        metrics.insert("assd".to_string(), a);
    }
    Ok(SegRecord {
        patient_id: sample.patient_id.clone(),
        image_id: sample.id.clone(),
        model: opts.model.clone(),
        strata: sample.strata.to_map(),
        metrics,
    })
}

/// Per-image metrics of a parameter set, in dataset order.
pub fn score<T: Scalar>(params: &ModelParams<T>, net: &NetConfig, dataset: &[Sample], opts: &EvalOptions) -> Result<Vec<SegRecord>> {
    dataset
        .par_iter()
        .map(|s| {
            let pred = segment(params, net, &s.image, opts)?;
            record_for(s, &pred, opts)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub records: Vec<SegRecord>,
    /// Overall rows followed by every stratification, in table order.
    pub table: ReportTable,
}

/// Rows of every group key stacked into one table, overall first.
pub fn full_report(records: &[SegRecord]) -> Result<ReportTable> {
    let mut rows = Vec::new();
    for key in GroupKey::ALL {
        rows.extend(stratified_report(records, key)?.rows);
    }
    Ok(ReportTable {
        key: GroupKey::Overall,
        rows,
    })
}

pub fn evaluate<T: Scalar>(checkpoint: &Checkpoint<T>, dataset: &[Sample], opts: &EvalOptions) -> Result<Evaluation> {
    checkpoint.check_layout()?;
    if dataset.is_empty() {
        return Err(Error::Param("evaluation dataset is empty".into()));
    }
    let records = score(&checkpoint.params, &checkpoint.config, dataset, opts)?;
    let table = full_report(&records)?;
    Ok(Evaluation { records, table })
}

/// Paired statistics of one metric between two models on the same images.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub metric: String,
    pub n: usize,
    pub ci: CIResult,
    pub ttest: TTestResult,
}

/// Pairs records by image id and tests `ours − baseline` for each base metric.
pub fn compare(ours: &[SegRecord], baseline: &[SegRecord], n_resamples: usize, level: f64, seed: u64) -> Result<Vec<Comparison>> {
    let base: BTreeMap<&str, &SegRecord> = baseline.iter().map(|r| (r.image_id.as_str(), r)).collect();
    if base.len() != ours.len() {
        return Err(Error::Param(format!(
            "comparison needs the same images: {} vs {} records",
            ours.len(),
            baseline.len()
        )));
    }
    let mut out = Vec::new();
    for metric in ["dice", "iou", "precision", "recall"] {
        let mut diffs = Vec::with_capacity(ours.len());
        for r in ours {
            let b = base
                .get(r.image_id.as_str())
                .ok_or_else(|| Error::Param(format!("image {} missing from the baseline run", r.image_id)))?;
            let (Some(x), Some(y)) = (r.metrics.get(metric), b.metrics.get(metric)) else {
                return Err(Error::Param(format!("image {} lacks metric {metric}", r.image_id)));
            };
            diffs.push(x - y);
        }
        out.push(Comparison {
            metric: metric.to_string(),
            n: diffs.len(),
            ci: bootstrap_ci(&diffs, n_resamples, level, seed)?,
            ttest: paired_t(&diffs)?,
        });
    }
    Ok(out)
}

pub fn comparison_markdown(rows: &[Comparison]) -> String {
    let mut out = String::from("| Metric | N | Mean diff | CI low | CI high | Bootstrap p | t | Paired t p |\n");
    out.push_str("|---|---|---|---|---|---|---|---|\n");
    for c in rows {
        let _ = writeln!(
            out,
            "| {} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |",
            c.metric, c.n, c.ci.mean_diff, c.ci.ci_low, c.ci.ci_high, c.ci.p_value, c.ttest.t, c.ttest.p_value
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_indices() {
        let idx: Vec<usize> = (0..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(idx, vec![0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect(5, 1), 0);
    }

    #[test]
    fn flips_are_involutions() {
        let v: Vec<f64> = (0..12).map(f64::from).collect();
        for hz in [true, false] {
            assert_eq!(flip_map(&flip_map(&v, 3, 4, hz), 3, 4, hz), v);
        }
        assert_eq!(flip_map(&v, 3, 4, true)[0], 3.0);
        assert_eq!(flip_map(&v, 3, 4, false)[0], 8.0);
    }
}
