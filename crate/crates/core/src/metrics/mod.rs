//! Segmentation quality metrics and the statistics used to compare two models.
//!
//! All metrics are computed in `f64` on binary masks. Overlap metrics follow one
//! empty-mask convention: both masks empty scores 1, exactly one empty scores 0.

mod contour;
mod report;
mod stats;

pub use contour::{assd, boundary_f1, DEFAULT_BF_TOLERANCE};
pub use report::{stratified_report, GroupKey, ReportRow, ReportTable, SegRecord, METRIC_COLUMNS};
pub use stats::{bootstrap_ci, paired_t, CIResult, TTestResult};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mask::BinaryMap;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    fn ratio(num: u64, den: u64) -> f64 {
        if den == 0 {
            1.0
        } else {
            num as f64 / den as f64
        }
    }

    pub fn dice(&self) -> f64 {
        Self::ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    pub fn iou(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fp + self.fn_)
    }

    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            // empty prediction: perfect only if the ground truth is empty too
            return if self.fn_ == 0 { 1.0 } else { 0.0 };
        }
        self.tp as f64 / (self.tp + self.fp) as f64
    }

    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            return if self.fp == 0 { 1.0 } else { 0.0 };
        }
        self.tp as f64 / (self.tp + self.fn_) as f64
    }
}

pub fn confusion(pred: &BinaryMap, gt: &BinaryMap) -> Result<ConfusionCounts> {
    pred.check_same_dims(gt)?;
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn dice(c: &ConfusionCounts) -> f64 {
    c.dice()
}

pub fn iou(c: &ConfusionCounts) -> f64 {
    c.iou()
}

pub fn precision(c: &ConfusionCounts) -> f64 {
    c.precision()
}

pub fn recall(c: &ConfusionCounts) -> f64 {
    c.recall()
}

/// Every per-image metric for one prediction. `assd` is `None` when undefined.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub dice: f64,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub bf: f64,
    pub assd: Option<f64>,
}

pub fn image_metrics(pred: &BinaryMap, gt: &BinaryMap, bf_tolerance: f64) -> Result<ImageMetrics> {
    let c = confusion(pred, gt)?;
    Ok(ImageMetrics {
        dice: c.dice(),
        iou: c.iou(),
        precision: c.precision(),
        recall: c.recall(),
        bf: boundary_f1(pred, gt, bf_tolerance)?,
        assd: assd(pred, gt).ok(),
    })
}
