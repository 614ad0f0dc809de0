use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture schedule of the residual encoder U-Net.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub features_per_stage: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub decoder_blocks_per_stage: usize,
    pub input_channels: usize,
    pub num_classes: usize,
    pub negative_slope: f64,
    pub kernel_size: usize,
    pub norm_eps: f64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig::full()
    }
}

impl NetworkConfig {
    /// The eight-stage 2-D configuration used on AISD.
    pub fn full() -> Self {
        NetworkConfig {
            features_per_stage: vec![32, 64, 128, 256, 512, 512, 512, 512],
            blocks_per_stage: vec![1, 3, 4, 6, 6, 6, 6, 6],
            decoder_blocks_per_stage: 1,
            input_channels: 1,
            num_classes: 2,
            negative_slope: 0.01,
            kernel_size: 3,
            norm_eps: 1e-5,
            seed: 0,
        }
    }

    /// Three stages, one block each; small enough to train in seconds.
    pub fn toy() -> Self {
        NetworkConfig {
            features_per_stage: vec![8, 16, 32],
            blocks_per_stage: vec![1, 1, 1],
            ..NetworkConfig::full()
        }
    }

    pub fn stages(&self) -> usize {
        self.features_per_stage.len()
    }

    /// Spatial extents must be multiples of this.
    pub fn required_divisor(&self) -> usize {
        1 << self.stages().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.features_per_stage.is_empty() {
            return bad("network needs at least one stage".into());
        }
        if self.features_per_stage.len() != self.blocks_per_stage.len() {
            return bad(format!(
                "{} feature widths but {} block counts",
                self.features_per_stage.len(),
                self.blocks_per_stage.len()
            ));
        }
        if self.features_per_stage.contains(&0) || self.blocks_per_stage.contains(&0) {
            return bad("feature widths and block counts must be >= 1".into());
        }
        if self.decoder_blocks_per_stage == 0 || self.input_channels == 0 || self.num_classes == 0 {
            return bad("decoder blocks, input channels and classes must be >= 1".into());
        }
        if self.kernel_size % 2 == 0 {
            return bad(format!("kernel size {} must be odd", self.kernel_size));
        }
        if !(self.negative_slope.is_finite() && self.negative_slope >= 0.0) {
            return bad(format!("negative slope {} must be finite and >= 0", self.negative_slope));
        }
        if !(self.norm_eps > 0.0 && self.norm_eps.is_finite()) {
            return bad(format!("norm eps {} must be positive", self.norm_eps));
        }
        if self.stages() > 16 {
            return bad(format!("{} stages is too deep", self.stages()));
        }
        Ok(())
    }

    /// Gain-adjusted Kaiming standard deviation for a layer with this fan-in.
    pub(crate) fn init_std(&self, fan_in: usize) -> f64 {
        let gain = (2.0 / (1.0 + self.negative_slope * self.negative_slope)).sqrt();
        gain / (fan_in as f64).sqrt()
    }
}

fn conv_params(cin: usize, cout: usize, k: usize) -> usize {
    cout * cin * k * k + cout
}

/// Closed-form trainable parameter count implied by a configuration.
pub fn parameter_count(config: &NetworkConfig) -> usize {
    let f = &config.features_per_stage;
    let k = config.kernel_size;
    let mut total = 0;
    for (s, (&width, &blocks)) in f.iter().zip(&config.blocks_per_stage).enumerate() {
        for b in 0..blocks {
            let cin = match (s, b) {
                (0, 0) => config.input_channels,
                (_, 0) => f[s - 1],
                _ => width,
            };
            let stride = if s > 0 && b == 0 { 2 } else { 1 };
            total += conv_params(cin, width, k) + conv_params(width, width, k) + 4 * width;
            if cin != width || stride != 1 {
                total += conv_params(cin, width, 1);
            }
        }
    }
    for s in 0..f.len().saturating_sub(1) {
        total += f[s + 1] * f[s] * 4 + f[s];
        total += conv_params(2 * f[s], f[s], k) + 2 * f[s];
        total += (config.decoder_blocks_per_stage - 1) * (conv_params(f[s], f[s], k) + 2 * f[s]);
    }
    total + conv_params(f[0], config.num_classes, 1)
}
