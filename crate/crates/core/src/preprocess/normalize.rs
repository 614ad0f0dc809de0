use crate::error::Result;
use crate::model::Volume;
use crate::preprocess::{DatasetFingerprint, PreprocessConfig};

/// `(clip(v, p_low, p_high) - mean) / (std + epsilon)` for a single intensity.
pub fn normalize_value(v: f64, fp: &DatasetFingerprint, epsilon: f64) -> f64 {
    (v.clamp(fp.p_low, fp.p_high) - fp.mean) / (fp.std + epsilon)
}

/// Percentile clipping followed by z-scoring with the dataset statistics.
pub fn ct_normalize(volume: &Volume, fingerprint: &DatasetFingerprint, config: &PreprocessConfig) -> Result<Volume> {
    fingerprint.validate()?;
    config.validate()?;
    let data = volume
        .data()
        .iter()
        .map(|&v| normalize_value(v as f64, fingerprint, config.epsilon) as f32)
        .collect();
    Ok(Volume::new(volume.case_id(), volume.extents(), volume.spacing(), data)?.with_orientation(volume.orientation().copied()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Extents, Spacing};
    use crate::preprocess::compute_fingerprint;
    use proptest::prelude::*;

    fn vol(values: Vec<f32>) -> Volume {
        let n = values.len();
        Volume::new("v", Extents::new(1, 1, n), Spacing::isotropic(1.0).unwrap(), values).unwrap()
    }

    const FP: DatasetFingerprint = DatasetFingerprint {
        p_low: -100.0,
        p_high: 300.0,
        mean: 40.0,
        std: 80.0,
    };

    #[test]
    fn constant_volume_at_mean_is_zero() {
        let v = vol(vec![12.5; 20]);
        let fp = compute_fingerprint([&v]).unwrap();
        let out = ct_normalize(&v, &fp, &PreprocessConfig::default()).unwrap();
        assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn arithmetic_example() {
        let out = ct_normalize(&vol(vec![120.0]), &FP, &PreprocessConfig::default()).unwrap();
        let expected = (120.0 - 40.0) / (80.0 + 1e-8);
        assert!((out.data()[0] as f64 - expected).abs() < 1e-6);
        assert!((out.data()[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn clipping_saturates() {
        let out = ct_normalize(&vol(vec![300.0, 5000.0, -100.0, -3000.0]), &FP, &PreprocessConfig::default()).unwrap();
        assert_eq!(out.data()[0], out.data()[1]);
        assert_eq!(out.data()[2], out.data()[3]);
    }

    #[test]
    fn training_population_is_standardised() {
        let values: Vec<f32> = (0..5000).map(|i| ((i * 7919) % 2003) as f32 * 0.9 - 1000.0).collect();
        let v = vol(values);
        let fp = compute_fingerprint([&v]).unwrap();
        let out = ct_normalize(&v, &fp, &PreprocessConfig::default()).unwrap();
        let n = out.data().len() as f64;
        let mean = out.data().iter().map(|&x| x as f64).sum::<f64>() / n;
        let var = out.data().iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-3);
        let expected_std = fp.std / (fp.std + 1e-8);
        assert!((var.sqrt() - expected_std).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn monotone_in_intensity(mut xs in proptest::collection::vec(-2000f32..3000.0, 2..64)) {
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let out = ct_normalize(&vol(xs), &FP, &PreprocessConfig::default()).unwrap();
            for w in out.data().windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
        }
    }
}
