//! Dataset fingerprinting, CT normalization, in-plane resampling and patch shaping.

mod fingerprint;
mod normalize;
mod patch;
pub mod pipeline;
mod resample;

use serde::{Deserialize, Serialize};

pub use fingerprint::{
    compute_fingerprint, fingerprint_of_values, percentile_sorted, DatasetFingerprint, HIGH_PERCENTILE, LOW_PERCENTILE,
};
pub use normalize::{ct_normalize, normalize_value};
pub use patch::{shape_to_patch, AxisAdjust, PatchRecord};
pub use pipeline::{
    compute_dataset_fingerprint, preprocess_case, preprocess_dataset, restore_prediction, CaseSidecar,
    PreprocessedCase, PreprocessedEntry, PreprocessedIndex,
};
pub use resample::{
    resample_image_slice, resample_image_to, resample_label_slice, resample_mask_slice, resample_mask_to,
    target_extent, InterpOrder,
};

use crate::error::{Error, Result};
use crate::model::PlaneSpacing;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub target_spacing: PlaneSpacing,
    /// `(rows, cols)`
    pub patch_size: [usize; 2],
    pub epsilon: f64,
    pub image_order: InterpOrder,
    pub mask_order: InterpOrder,
    pub mask_threshold: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            target_spacing: PlaneSpacing { dy: 1.0, dx: 1.0 },
            patch_size: [512, 512],
            epsilon: 1e-8,
            image_order: InterpOrder::Cubic,
            mask_order: InterpOrder::Linear,
            mask_threshold: 0.5,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        PlaneSpacing::new(self.target_spacing.dy, self.target_spacing.dx)?;
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon {} must be positive", self.epsilon)));
        }
        if self.patch_size.contains(&0) {
            return Err(Error::Config(format!("patch size {:?} must be non-zero", self.patch_size)));
        }
        if !(0.0..=1.0).contains(&self.mask_threshold) {
            return Err(Error::Config(format!("mask threshold {} outside [0, 1]", self.mask_threshold)));
        }
        Ok(())
    }
}
