use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::metrics::CaseMetrics;
use crate::error::{Error, Result};
use crate::model::LabelMask;

pub const EXTRACRANIAL_BAND: &str = "extracranial-band";
pub const SCORE_FLOOR: &str = "score-floor";

/// One named rule as written in a config file; parameters not used by the rule are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub name: String,
    /// Fraction of slices at each end of the stack forming the band.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band_fraction: Option<f64>,
    /// Share of predicted foreground that must fall in empty band slices.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_predicted_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

impl RuleSpec {
    pub fn named(name: &str) -> Self {
        RuleSpec {
            name: name.to_string(),
            band_fraction: None,
            min_predicted_fraction: None,
            threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierRuleConfig {
    pub rules: Vec<RuleSpec>,
}

impl Default for OutlierRuleConfig {
    fn default() -> Self {
        OutlierRuleConfig {
            rules: vec![RuleSpec::named(EXTRACRANIAL_BAND)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutlierRule {
    ExtracranialBand { band_fraction: f64, min_predicted_fraction: f64 },
    ScoreFloor { threshold: f64 },
}

impl OutlierRule {
    pub fn name(&self) -> &'static str {
        match self {
            OutlierRule::ExtracranialBand { .. } => EXTRACRANIAL_BAND,
            OutlierRule::ScoreFloor { .. } => SCORE_FLOOR,
        }
    }

    pub fn needs_masks(&self) -> bool {
        matches!(self, OutlierRule::ExtracranialBand { .. })
    }
}

impl OutlierRuleConfig {
    pub fn compile(&self) -> Result<Vec<OutlierRule>> {
        let unit = |name: &str, field: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(v)
            } else {
                Err(Error::Config(format!("rule {name}: {field} {v} outside [0, 1]")))
            }
        };
        self.rules
            .iter()
            .map(|r| match r.name.as_str() {
                EXTRACRANIAL_BAND => Ok(OutlierRule::ExtracranialBand {
                    band_fraction: unit(&r.name, "band_fraction", r.band_fraction.unwrap_or(0.1))?,
                    min_predicted_fraction: unit(&r.name, "min_predicted_fraction", r.min_predicted_fraction.unwrap_or(0.5))?,
                }),
                SCORE_FLOOR => {
                    let t = r
                        .threshold
                        .ok_or_else(|| Error::Config(format!("rule {SCORE_FLOOR} needs a threshold")))?;
                    Ok(OutlierRule::ScoreFloor {
                        threshold: unit(&r.name, "threshold", t)?,
                    })
                }
                other => Err(Error::Config(format!(
                    "unknown outlier rule {other:?} (known: {EXTRACRANIAL_BAND}, {SCORE_FLOOR})"
                ))),
            })
            .collect()
    }
}

/// Number of slices at each end of an `n`-slice stack that form the band.
pub fn band_width(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).round() as usize).max(1).min(n)
}

/// Share of predicted foreground lying in band slices whose reference slice is empty.
pub fn band_fraction_of_prediction(pred: &LabelMask, gt: &LabelMask, fraction: f64) -> Result<f64> {
    if pred.extents() != gt.extents() {
        return Err(Error::Shape(format!("prediction {} vs reference {}", pred.extents(), gt.extents())));
    }
    let e = pred.extents();
    let plane = e.plane_len();
    let band = band_width(e.slices, fraction);
    let (mut in_band, mut total) = (0usize, 0usize);
    for s in 0..e.slices {
        let p = pred.data()[s * plane..(s + 1) * plane].iter().filter(|&&v| v != 0).count();
        total += p;
        let edge = s < band || s >= e.slices - band;
        if edge && gt.data()[s * plane..(s + 1) * plane].iter().all(|&v| v == 0) {
            in_band += p;
        }
    }
    Ok(if total == 0 { 0.0 } else { in_band as f64 / total as f64 })
}

/// Names of the rules that fire for one case. Mask-based rules are skipped when masks are absent.
pub fn case_flags(metrics: &CaseMetrics, masks: Option<(&LabelMask, &LabelMask)>, rules: &[OutlierRule]) -> Result<BTreeSet<String>> {
    let mut flags = BTreeSet::new();
    for rule in rules {
        let fired = match (*rule, masks) {
            (OutlierRule::ExtracranialBand { band_fraction, min_predicted_fraction }, Some((pred, gt))) => {
                band_fraction_of_prediction(pred, gt, band_fraction)? > min_predicted_fraction
            }
            (OutlierRule::ExtracranialBand { .. }, None) => false,
            (OutlierRule::ScoreFloor { threshold }, _) => metrics.dice < threshold,
        };
        if fired {
            flags.insert(rule.name().to_string());
        }
    }
    Ok(flags)
}

/// Sets `outlier_flags` on every case; `masks[i]` is `(prediction, reference)` for `cases[i]`.
pub fn flag_outliers(cases: &mut [CaseMetrics], masks: &[(&LabelMask, &LabelMask)], config: &OutlierRuleConfig) -> Result<()> {
    let rules = config.compile()?;
    if masks.len() != cases.len() {
        return Err(Error::Contract(format!("{} cases but {} mask pairs", cases.len(), masks.len())));
    }
    for (case, &(p, g)) in cases.iter_mut().zip(masks) {
        case.outlier_flags = case_flags(case, Some((p, g)), &rules).map_err(|e| e.for_case(&case.case_id))?;
    }
    Ok(())
}
