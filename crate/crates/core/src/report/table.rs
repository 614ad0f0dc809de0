use serde::{Deserialize, Serialize};

use crate::evaluation::{AggregateReport, OutlierRuleConfig};

/// A published score quoted for comparison; never computed here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalReference {
    pub method: String,
    pub mean_dice: f64,
    pub note: String,
}

pub fn sean_reference() -> ExternalReference {
    ExternalReference {
        method: "SEAN".into(),
        mean_dice: 0.578,
        note: "external constant quoted from the literature; not produced by this pipeline".into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub metric: String,
    pub value: String,
    pub values: Vec<f64>,
}

/// Results in the row layout of the original results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<TableRow>,
    pub n_cases: usize,
    pub n_adjusted: usize,
    pub excluded_case_ids: Vec<String>,
    pub outlier_rule_config: OutlierRuleConfig,
    pub both_empty_case_ids: Vec<String>,
    pub both_empty_convention: String,
    pub reference: ExternalReference,
}

fn row(metric: &str, values: Vec<f64>) -> TableRow {
    let value = values.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" - ");
    TableRow {
        metric: metric.into(),
        value,
        values,
    }
}

pub fn results_table(agg: &AggregateReport) -> ResultsTable {
    ResultsTable {
        rows: vec![
            row("Mean Dice Score", vec![agg.mean_dice]),
            row("Mean IoU (Jaccard)", vec![agg.mean_iou]),
            row("Dice Score Range", vec![agg.dice_min, agg.dice_max]),
            row("Adjusted Mean Dice Score (excluding outliers)", vec![agg.adjusted_mean_dice]),
            row("Adjusted Mean IoU (excluding outliers)", vec![agg.adjusted_mean_iou]),
        ],
        n_cases: agg.n_cases,
        n_adjusted: agg.n_adjusted,
        excluded_case_ids: agg.excluded_case_ids.clone(),
        outlier_rule_config: agg.outlier_rule_config.clone(),
        both_empty_case_ids: agg.both_empty_case_ids.clone(),
        both_empty_convention: "cases with empty prediction and empty reference score dice = iou = 1".into(),
        reference: sean_reference(),
    }
}

pub fn render_markdown(t: &ResultsTable) -> String {
    let mut s = String::from("| Metric | Value |\n|---|---|\n");
    for r in &t.rows {
        s.push_str(&format!("| {} | {} |\n", r.metric, r.value));
    }
    s.push_str(&format!(
        "\n{} cases evaluated, {} after excluding outliers.\n",
        t.n_cases, t.n_adjusted
    ));
    let rules: Vec<&str> = t.outlier_rule_config.rules.iter().map(|r| r.name.as_str()).collect();
    s.push_str(&format!("Outlier rules: {}.\n", rules.join(", ")));
    if !t.excluded_case_ids.is_empty() {
        s.push_str(&format!("Excluded: {}.\n", t.excluded_case_ids.join(", ")));
    }
    if !t.both_empty_case_ids.is_empty() {
        s.push_str(&format!(
            "Both-empty cases ({}): {}.\n",
            t.both_empty_convention,
            t.both_empty_case_ids.join(", ")
        ));
    }
    s.push_str(&format!(
        "\nReference: {} mean Dice {:.3} ({}).\n",
        t.reference.method, t.reference.mean_dice, t.reference.note
    ));
    s
}
