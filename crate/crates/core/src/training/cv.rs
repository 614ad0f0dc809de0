use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::data::SliceDataset;
use super::trainer::{evaluate_slices, train_on_slices, FoldResult};
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::evaluation::CaseMetrics;
use crate::fsutil::write_json_atomic;
use crate::network::{NetworkConfig, ResEncUNet};

pub const HIGHEST_FOLD_CONVENTION: &str =
    "max_mean_dice is the highest per-fold mean over the evaluated folds, not an average across folds";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CvMode {
    /// One model per evaluated fold, each trained without that fold.
    #[default]
    PerFoldModels,
    /// One model trained without any evaluated fold, then scored on each of them.
    SingleModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRun {
    pub fold: usize,
    /// Directory holding the checkpoints of the model scored here.
    pub model_dir: Option<PathBuf>,
    pub n_cases: usize,
    pub mean_dice: f64,
    pub mean_iou: f64,
    pub cases: Vec<CaseMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub mode: CvMode,
    pub runs: Vec<FoldRun>,
    pub max_mean_dice: f64,
    pub max_fold: usize,
    pub selection_convention: String,
}

pub const CV_SUMMARY: &str = "cv_summary.json";

fn score(fold: usize, data: &SliceDataset, result: &FoldResult, net: &ResEncUNet, batch: usize) -> Result<FoldRun> {
    let (_, idx) = data.split(&[fold]);
    if idx.is_empty() {
        return Err(Error::Data(format!("fold {fold} has no cases")));
    }
    let cases = evaluate_slices(net, &result.params, data, &idx, batch)?;
    let n = cases.len() as f64;
    Ok(FoldRun {
        fold,
        model_dir: result.out_dir.clone(),
        n_cases: cases.len(),
        mean_dice: cases.iter().map(|c| c.dice).sum::<f64>() / n,
        mean_iou: cases.iter().map(|c| c.iou).sum::<f64>() / n,
        cases,
    })
}

/// Trains and scores the configured validation folds; final (not best) weights are scored.
pub fn run_cross_validation(
    data: &SliceDataset,
    net_config: &NetworkConfig,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<CvSummary> {
    config.validate()?;
    if config.validation_folds.is_empty() {
        return Err(Error::Config("no validation folds requested".into()));
    }
    let net = ResEncUNet::new(net_config.clone())?;
    let sub = |name: String| -> Result<Option<PathBuf>> {
        match out_dir {
            Some(d) => {
                let p = d.join(name);
                std::fs::create_dir_all(&p).map_err(|e| Error::io(format!("creating {}", p.display()), e))?;
                Ok(Some(p))
            }
            None => Ok(None),
        }
    };
    let mut runs = Vec::new();
    match config.cv_mode {
        CvMode::PerFoldModels => {
            for &fold in &config.validation_folds {
                let dir = sub(format!("fold_{fold}"))?;
                let result = train_on_slices(data, &[fold], net_config, config, dir.as_deref())?;
                runs.push(score(fold, data, &result, &net, config.batch_size)?);
            }
        }
        CvMode::SingleModel => {
            let dir = sub("single_model".to_string())?;
            let result = train_on_slices(data, &config.validation_folds, net_config, config, dir.as_deref())?;
            for &fold in &config.validation_folds {
                runs.push(score(fold, data, &result, &net, config.batch_size)?);
            }
        }
    }
    let (max_fold, max_mean_dice) = runs
        .iter()
        .map(|r| (r.fold, r.mean_dice))
        .fold((runs[0].fold, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
    let summary = CvSummary {
        mode: config.cv_mode,
        runs,
        max_mean_dice,
        max_fold,
        selection_convention: HIGHEST_FOLD_CONVENTION.to_string(),
    };
    if let Some(d) = out_dir {
        write_json_atomic(&d.join(CV_SUMMARY), &summary)?;
    }
    Ok(summary)
}
