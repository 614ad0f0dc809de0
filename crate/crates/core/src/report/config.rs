use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::overlay::OverlaySpec;
use crate::error::{Error, Result};
use crate::evaluation::OutlierRuleConfig;
use crate::model::LabelRemap;
use crate::network::NetworkConfig;
use crate::preprocess::PreprocessConfig;
use crate::training::TrainConfig;

/// Overrides `paths.preprocessed` when set.
pub const CACHE_DIR_ENV: &str = "STROKESEG_CACHE_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelinePaths {
    /// Directory holding `manifest.json`.
    pub raw_data: PathBuf,
    pub preprocessed: PathBuf,
    pub checkpoints: PathBuf,
    pub predictions: PathBuf,
    pub reports: PathBuf,
}

impl Default for PipelinePaths {
    fn default() -> Self {
        PipelinePaths {
            raw_data: "data/raw".into(),
            preprocessed: "data/preprocessed".into(),
            checkpoints: "runs/checkpoints".into(),
            predictions: "runs/predictions".into(),
            reports: "runs/reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    pub outlier_rules: OutlierRuleConfig,
    pub exclude_outliers: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            outlier_rules: OutlierRuleConfig::default(),
            exclude_outliers: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub paths: PipelinePaths,
    pub label_remap: LabelRemap,
    pub preprocess: PreprocessConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub evaluation: EvaluationConfig,
    pub overlay: OverlaySpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: PipelinePaths::default(),
            label_remap: LabelRemap::acute_infarct(),
            preprocess: PreprocessConfig::default(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            evaluation: EvaluationConfig::default(),
            overlay: OverlaySpec::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads `path` (or the defaults when `None`), applies `key=value` overrides, then the
    /// cache-dir environment variable. Relative paths are left relative to the working directory.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let bytes = std::fs::read(p).map_err(|e| Error::io(format!("reading {}", p.display()), e))?;
                serde_json::from_slice::<Value>(&bytes).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => serde_json::to_value(PipelineConfig::default())?,
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut cfg: PipelineConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(format!("invalid configuration: {e}")))?;
        if let Some(dir) = std::env::var_os(CACHE_DIR_ENV).filter(|d| !d.is_empty()) {
            cfg.paths.preprocessed = PathBuf::from(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.network.validate()?;
        self.train.validate()?;
        self.evaluation.outlier_rules.compile()?;
        self.overlay.validate()?;
        let d = self.network.required_divisor();
        if self.preprocess.patch_size.iter().any(|p| p % d != 0) {
            return Err(Error::Config(format!(
                "patch size {:?} must be a multiple of {d} for a {}-stage network",
                self.preprocess.patch_size,
                self.network.stages()
            )));
        }
        if self.network.input_channels != 1 || self.network.num_classes != 2 {
            return Err(Error::Config("the pipeline trains single-channel binary networks".into()));
        }
        Ok(())
    }
}

/// Sets a dotted key such as `train.epochs=3`. The value is parsed as JSON and falls back to a
/// plain string; missing intermediate objects are created.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let parsed = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let mut cur = root;
    for part in &parts[..parts.len() - 1] {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {part} is not inside an object")))?;
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = cur
        .as_object_mut()
        .ok_or_else(|| Error::Config(format!("override {key:?} does not address an object field")))?;
    obj.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}
