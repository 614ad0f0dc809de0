use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Volume;

pub const LOW_PERCENTILE: f64 = 0.5;
pub const HIGH_PERCENTILE: f64 = 99.5;

/// Dataset-wide intensity statistics that parameterise CT normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetFingerprint {
    pub p_low: f64,
    pub p_high: f64,
    /// Mean after clipping to `[p_low, p_high]`.
    pub mean: f64,
    /// Population standard deviation after clipping.
    pub std: f64,
}

impl DatasetFingerprint {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.p_low, self.p_high, self.mean, self.std].iter().all(|v| v.is_finite());
        if !finite || self.p_low > self.p_high || self.std < 0.0 {
            return Err(Error::Data(format!("invalid fingerprint {self:?}")));
        }
        Ok(())
    }
}

/// Percentile of sorted data with linear interpolation between the closest ranks:
/// position `p / 100 * (n - 1)`.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = (p / 100.0).clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Fingerprint over every voxel of the given training volumes.
pub fn compute_fingerprint<'a>(volumes: impl IntoIterator<Item = &'a Volume>) -> Result<DatasetFingerprint> {
    let mut values: Vec<f64> = Vec::new();
    for v in volumes {
        values.extend(v.data().iter().map(|&x| x as f64));
    }
    fingerprint_of_values(values)
}

pub fn fingerprint_of_values(mut values: Vec<f64>) -> Result<DatasetFingerprint> {
    if values.is_empty() {
        return Err(Error::Data("fingerprint population is empty".into()));
    }
    values.sort_unstable_by(f64::total_cmp);
    let p_low = percentile_sorted(&values, LOW_PERCENTILE);
    let p_high = percentile_sorted(&values, HIGH_PERCENTILE);
    let n = values.len() as f64;
    let mean = values.iter().map(|v| v.clamp(p_low, p_high)).sum::<f64>() / n;
    let var = values
        .iter()
        .map(|v| {
            let d = v.clamp(p_low, p_high) - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    Ok(DatasetFingerprint {
        p_low,
        p_high,
        mean,
        std: var.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Extents, Spacing};

    /// Direct transcription of the closest-ranks definition, independent of `percentile_sorted`.
    fn oracle_percentile(values: &[f64], p: f64) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let rank = p / 100.0 * (v.len() as f64 - 1.0);
        let below = rank as usize;
        let w = rank - below as f64;
        if below + 1 >= v.len() {
            v[below]
        } else {
            (1.0 - w) * v[below] + w * v[below + 1]
        }
    }

    fn vol(values: Vec<f32>) -> Volume {
        let n = values.len();
        Volume::new("v", Extents::new(1, 1, n), Spacing::isotropic(1.0).unwrap(), values).unwrap()
    }

    #[test]
    fn constant_volume() {
        let f = compute_fingerprint([&vol(vec![7.0; 30])]).unwrap();
        assert_eq!(f, DatasetFingerprint { p_low: 7.0, p_high: 7.0, mean: 7.0, std: 0.0 });
    }

    #[test]
    fn thousand_ramp_percentiles() {
        let values: Vec<f64> = (0..1000).map(f64::from).collect();
        assert!((oracle_percentile(&values, 0.5) - 4.995).abs() < 1e-9);
        assert!((oracle_percentile(&values, 99.5) - 994.005).abs() < 1e-9);
        let f = compute_fingerprint([&vol(values.iter().map(|&v| v as f32).collect())]).unwrap();
        assert!((f.p_low - 4.995).abs() < 1e-9);
        assert!((f.p_high - 994.005).abs() < 1e-9);
    }

    #[test]
    fn matches_oracle_on_irregular_data() {
        let values: Vec<f64> = (0..337).map(|i| ((i * 7919) % 1013) as f64 * 0.37 - 100.0).collect();
        let f = fingerprint_of_values(values.clone()).unwrap();
        assert!((f.p_low - oracle_percentile(&values, 0.5)).abs() < 1e-9);
        assert!((f.p_high - oracle_percentile(&values, 99.5)).abs() < 1e-9);
    }

    #[test]
    fn duplicated_volume_gives_same_fingerprint() {
        // 1000 voxels: p * n is integral for both percentiles, where duplication invariance is exact
        let values: Vec<f32> = (0..1000).map(|i| ((i * 37) % 1000) as f32 * 0.5 - 40.0).collect();
        let v = vol(values);
        let one = compute_fingerprint([&v]).unwrap();
        let two = compute_fingerprint([&v, &v]).unwrap();
        for (a, b) in [(one.p_low, two.p_low), (one.p_high, two.p_high), (one.mean, two.mean), (one.std, two.std)] {
            assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn empty_population_is_data_error() {
        assert!(matches!(compute_fingerprint(std::iter::empty()), Err(Error::Data(_))));
    }
}
