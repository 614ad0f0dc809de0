//! Per-case Dice/IoU, rule-based outlier flags and outlier-adjusted aggregates.

mod metrics;
mod outliers;

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use metrics::{confusion, confusion_of, dice, dice_iou_consistency, iou, CaseMetrics, ConfusionCounts};
pub use outliers::{
    band_fraction_of_prediction, band_width, case_flags, flag_outliers, OutlierRule, OutlierRuleConfig, RuleSpec,
    EXTRACRANIAL_BAND, SCORE_FLOOR,
};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::model::LabelMask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub n_cases: usize,
    pub mean_dice: f64,
    pub mean_iou: f64,
    pub dice_min: f64,
    pub dice_max: f64,
    pub adjusted_mean_dice: f64,
    pub adjusted_mean_iou: f64,
    pub n_adjusted: usize,
    pub excluded_case_ids: Vec<String>,
    /// Cases where both masks were empty and scored 1.
    pub both_empty_case_ids: Vec<String>,
    pub outlier_rule_config: OutlierRuleConfig,
}

fn mean(values: impl Iterator<Item = f64>) -> (f64, usize) {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (sum / n as f64, n)
}

/// Means and range over all cases; adjusted means skip flagged cases when `exclude_flagged`.
pub fn aggregate(cases: &[CaseMetrics], exclude_flagged: bool, rule_config: &OutlierRuleConfig) -> Result<AggregateReport> {
    if cases.is_empty() {
        return Err(Error::Aggregation("no cases to aggregate".into()));
    }
    let excluded: Vec<&CaseMetrics> = cases
        .iter()
        .filter(|c| exclude_flagged && !c.outlier_flags.is_empty())
        .collect();
    if excluded.len() == cases.len() {
        return Err(Error::Aggregation(format!("all {} cases were excluded as outliers", cases.len())));
    }
    let kept = || cases.iter().filter(|c| !(exclude_flagged && !c.outlier_flags.is_empty()));
    let (mean_dice, n) = mean(cases.iter().map(|c| c.dice));
    let (adjusted_mean_dice, n_adjusted) = mean(kept().map(|c| c.dice));
    Ok(AggregateReport {
        n_cases: n,
        mean_dice,
        mean_iou: mean(cases.iter().map(|c| c.iou)).0,
        dice_min: cases.iter().map(|c| c.dice).fold(f64::INFINITY, f64::min),
        dice_max: cases.iter().map(|c| c.dice).fold(f64::NEG_INFINITY, f64::max),
        adjusted_mean_dice,
        adjusted_mean_iou: mean(kept().map(|c| c.iou)).0,
        n_adjusted,
        excluded_case_ids: excluded.iter().map(|c| c.case_id.clone()).collect(),
        both_empty_case_ids: cases.iter().filter(|c| c.both_empty).map(|c| c.case_id.clone()).collect(),
        outlier_rule_config: rule_config.clone(),
    })
}

/// Metrics and flags for one case from full 3-D prediction and reference stacks.
pub fn evaluate_case(case_id: &str, pred: &LabelMask, gt: &LabelMask, rules: &[OutlierRule]) -> Result<CaseMetrics> {
    let run = || {
        let counts = confusion(pred, gt)?;
        let mut m = CaseMetrics::from_counts(case_id, &counts);
        m.outlier_flags = case_flags(&m, Some((pred, gt)), rules)?;
        Ok(m)
    };
    run().map_err(|e: Error| e.for_case(case_id))
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    case_id: String,
    dice: f64,
    iou: f64,
    gt_voxels: u64,
    pred_voxels: u64,
    both_empty: bool,
    flags: String,
}

pub fn case_csv_bytes(cases: &[CaseMetrics]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for c in cases {
        w.serialize(CsvRow {
            case_id: c.case_id.clone(),
            dice: c.dice,
            iou: c.iou,
            gt_voxels: c.gt_voxels,
            pred_voxels: c.pred_voxels,
            both_empty: c.both_empty,
            flags: c.outlier_flags.iter().cloned().collect::<Vec<_>>().join(";"),
        })
        .map_err(|e| Error::Format(format!("csv: {e}")))?;
    }
    w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))
}

/// Per-case table: `case_id, dice, iou, gt_voxels, pred_voxels, both_empty, flags` (flags `;`-separated).
pub fn write_case_csv(path: &Path, cases: &[CaseMetrics]) -> Result<()> {
    write_atomic(path, &case_csv_bytes(cases)?)
}

pub fn read_case_csv(path: &Path) -> Result<Vec<CaseMetrics>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    r.deserialize::<CsvRow>()
        .map(|row| {
            let row = row.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
            Ok(CaseMetrics {
                case_id: row.case_id,
                dice: row.dice,
                iou: row.iou,
                gt_voxels: row.gt_voxels,
                pred_voxels: row.pred_voxels,
                both_empty: row.both_empty,
                outlier_flags: row.flags.split(';').filter(|s| !s.is_empty()).map(String::from).collect::<BTreeSet<_>>(),
            })
        })
        .collect()
}
