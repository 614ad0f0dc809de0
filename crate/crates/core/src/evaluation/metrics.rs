use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LabelMask;

/// Voxelwise agreement between a binary prediction and a binary reference.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_positive: u64,
    pub false_positive: u64,
    pub false_negative: u64,
    pub true_negative: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_positive + self.false_positive + self.false_negative + self.true_negative
    }

    pub fn pred_voxels(&self) -> u64 {
        self.true_positive + self.false_positive
    }

    pub fn gt_voxels(&self) -> u64 {
        self.true_positive + self.false_negative
    }

    /// Neither mask has any foreground.
    pub fn both_empty(&self) -> bool {
        self.true_positive + self.false_positive + self.false_negative == 0
    }

    pub fn merge(&self, other: &ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            true_positive: self.true_positive + other.true_positive,
            false_positive: self.false_positive + other.false_positive,
            false_negative: self.false_negative + other.false_negative,
            true_negative: self.true_negative + other.true_negative,
        }
    }
}

/// Counts over two equally long label buffers; any non-zero label is foreground.
pub fn confusion_of(pred: &[u8], gt: &[u8]) -> Result<ConfusionCounts> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("prediction has {} voxels, reference {}", pred.len(), gt.len())));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.iter().zip(gt) {
        match (p != 0, g != 0) {
            (true, true) => c.true_positive += 1,
            (true, false) => c.false_positive += 1,
            (false, true) => c.false_negative += 1,
            (false, false) => c.true_negative += 1,
        }
    }
    Ok(c)
}

pub fn confusion(pred: &LabelMask, gt: &LabelMask) -> Result<ConfusionCounts> {
    if pred.extents() != gt.extents() {
        return Err(Error::Shape(format!(
            "prediction extents {} differ from reference extents {}",
            pred.extents(),
            gt.extents()
        )));
    }
    confusion_of(pred.data(), gt.data())
}

/// `2TP / (2TP + FP + FN)`; 1 when both masks are empty.
pub fn dice(c: &ConfusionCounts) -> f64 {
    if c.both_empty() {
        return 1.0;
    }
    2.0 * c.true_positive as f64 / (2 * c.true_positive + c.false_positive + c.false_negative) as f64
}

/// `TP / (TP + FP + FN)`; 1 when both masks are empty.
pub fn iou(c: &ConfusionCounts) -> f64 {
    if c.both_empty() {
        return 1.0;
    }
    c.true_positive as f64 / (c.true_positive + c.false_positive + c.false_negative) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub case_id: String,
    pub dice: f64,
    pub iou: f64,
    pub gt_voxels: u64,
    pub pred_voxels: u64,
    /// Both masks empty, so dice and iou were set to 1 by convention.
    pub both_empty: bool,
    pub outlier_flags: BTreeSet<String>,
}

impl CaseMetrics {
    pub fn from_counts(case_id: impl Into<String>, counts: &ConfusionCounts) -> Self {
        CaseMetrics {
            case_id: case_id.into(),
            dice: dice(counts),
            iou: iou(counts),
            gt_voxels: counts.gt_voxels(),
            pred_voxels: counts.pred_voxels(),
            both_empty: counts.both_empty(),
            outlier_flags: BTreeSet::new(),
        }
    }

    /// Dice under the alternative convention that scores a both-empty case 0.
    pub fn dice_zero_convention(&self) -> f64 {
        if self.both_empty {
            0.0
        } else {
            self.dice
        }
    }
}

/// Whether `iou == dice / (2 - dice)` to 1e-12.
pub fn dice_iou_consistency(case: &CaseMetrics) -> bool {
    (case.iou - case.dice / (2.0 - case.dice)).abs() < 1e-12
}
