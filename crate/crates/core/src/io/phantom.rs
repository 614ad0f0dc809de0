//! Synthetic CT phantoms: an ellipsoidal brain with hypodense ellipsoidal lesions.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::manifest::DatasetManifest;
use crate::io::nifti;
use crate::model::{CaseRecord, Extents, LabelMask, LabelSchema, SplitTag, Spacing, Volume};

/// Axis-aligned ellipsoid in millimetres, `(z, y, x)` order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
}

impl Ellipsoid {
    /// Squared normalised radius of a point; `<= 1` means inside.
    pub fn radius2(&self, p: [f64; 3]) -> f64 {
        (0..3)
            .map(|i| {
                let d = (p[i] - self.center[i]) / self.semi_axes[i];
                d * d
            })
            .sum()
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        self.radius2(p) <= 1.0
    }

    pub fn volume(&self) -> f64 {
        4.0 / 3.0 * std::f64::consts::PI * self.semi_axes.iter().product::<f64>()
    }

    fn is_degenerate(&self) -> bool {
        self.semi_axes.iter().any(|a| !(a.is_finite() && *a > 0.0)) || self.center.iter().any(|c| !c.is_finite())
    }

    /// True when a dense sample of this ellipsoid's surface lies inside `outer`.
    fn inside(&self, outer: &Ellipsoid) -> bool {
        const N_THETA: usize = 48;
        const N_PHI: usize = 96;
        for i in 0..=N_THETA {
            let theta = std::f64::consts::PI * i as f64 / N_THETA as f64;
            for j in 0..N_PHI {
                let phi = 2.0 * std::f64::consts::PI * j as f64 / N_PHI as f64;
                let u = [theta.cos(), theta.sin() * phi.sin(), theta.sin() * phi.cos()];
                let p = [
                    self.center[0] + self.semi_axes[0] * u[0],
                    self.center[1] + self.semi_axes[1] * u[1],
                    self.center[2] + self.semi_axes[2] * u[2],
                ];
                if !outer.contains(p) {
                    return false;
                }
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionSpec {
    pub shape: Ellipsoid,
    /// Added to the brain intensity; negative for hypodense tissue.
    pub offset_hu: f64,
    /// Mask label written for this lesion.
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub case_id: String,
    pub extents: Extents,
    pub spacing: Spacing,
    pub brain: Ellipsoid,
    /// Painted in order; later lesions overwrite earlier ones where they overlap.
    pub lesions: Vec<LesionSpec>,
    pub background_hu: f64,
    pub brain_hu: f64,
    pub noise_std: f64,
    pub seed: u64,
    pub label_schema: LabelSchema,
}

impl PhantomSpec {
    /// A phantom with one foreground lesion, label 1, and a binary schema.
    pub fn single_lesion(extents: Extents, spacing: Spacing, brain: Ellipsoid, lesion: Ellipsoid, offset_hu: f64) -> Self {
        PhantomSpec {
            case_id: "phantom".into(),
            extents,
            spacing,
            brain,
            lesions: vec![LesionSpec {
                shape: lesion,
                offset_hu,
                label: 1,
            }],
            background_hu: -1000.0,
            brain_hu: 35.0,
            noise_std: 0.0,
            seed: 0,
            label_schema: LabelSchema::binary("lesion"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.extents.is_empty() {
            return Err(Error::Spec(format!("extents {} must be non-empty", self.extents)));
        }
        self.spacing.validate().map_err(|e| Error::Spec(e.to_string()))?;
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::Spec(format!("noise std {} must be >= 0", self.noise_std)));
        }
        for v in [self.background_hu, self.brain_hu] {
            if !v.is_finite() {
                return Err(Error::Spec(format!("intensity {v} must be finite")));
            }
        }
        if self.brain.is_degenerate() {
            return Err(Error::Spec(format!("degenerate brain ellipsoid {:?}", self.brain)));
        }
        for (i, l) in self.lesions.iter().enumerate() {
            if l.shape.is_degenerate() {
                return Err(Error::Spec(format!("lesion {i} has degenerate semi-axes {:?}", l.shape.semi_axes)));
            }
            if !l.shape.inside(&self.brain) {
                return Err(Error::Spec(format!("lesion {i} is not contained in the brain ellipsoid")));
            }
            if !self.label_schema.contains(l.label) || l.label == 0 {
                return Err(Error::Spec(format!("lesion {i} label {} is not a foreground schema label", l.label)));
            }
            if !l.offset_hu.is_finite() {
                return Err(Error::Spec(format!("lesion {i} offset must be finite")));
            }
        }
        Ok(())
    }

    fn position(&self, s: usize, r: usize, c: usize) -> [f64; 3] {
        [
            s as f64 * self.spacing.dz,
            r as f64 * self.spacing.dy,
            c as f64 * self.spacing.dx,
        ]
    }
}

/// Renders the phantom image and its label mask.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(Volume, LabelMask)> {
    spec.validate()?;
    let e = spec.extents;
    let mut image = vec![0f32; e.len()];
    let mut labels = vec![0u8; e.len()];
    for s in 0..e.slices {
        for r in 0..e.rows {
            for c in 0..e.cols {
                let p = spec.position(s, r, c);
                let i = e.index(s, r, c);
                let mut v = spec.background_hu;
                if spec.brain.contains(p) {
                    v = spec.brain_hu;
                    for l in &spec.lesions {
                        if l.shape.contains(p) {
                            v = spec.brain_hu + l.offset_hu;
                            labels[i] = l.label;
                        }
                    }
                }
                image[i] = v as f32;
            }
        }
    }
    if spec.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let normal = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Spec(e.to_string()))?;
        for v in &mut image {
            *v += normal.sample(&mut rng) as f32;
        }
    }
    let volume = Volume::new(spec.case_id.clone(), e, spec.spacing, image)?;
    let mask = LabelMask::new(e, spec.spacing, labels, spec.label_schema.clone())?;
    Ok((volume, mask))
}

/// Geometry shared by every case of a generated phantom dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomDatasetConfig {
    pub extents: Extents,
    pub spacing: Spacing,
    pub noise_std: f64,
    pub lesion_offset_hu: f64,
}

impl Default for PhantomDatasetConfig {
    fn default() -> Self {
        PhantomDatasetConfig {
            extents: Extents::new(8, 40, 40),
            spacing: Spacing {
                dx: 1.6,
                dy: 1.6,
                dz: 5.0,
            },
            noise_std: 3.0,
            lesion_offset_hu: -15.0,
        }
    }
}

impl PhantomDatasetConfig {
    /// Randomised spec for case `index`. Lesions are labelled clear (1) or blurred (3) acute
    /// infarct under the five-class schema.
    pub fn case_spec(&self, index: usize, seed: u64) -> PhantomSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let e = self.extents;
        let sp = self.spacing;
        let span = |n: usize, d: f64| (n.saturating_sub(1)) as f64 * d;
        let (sz, sy, sx) = (span(e.slices, sp.dz), span(e.rows, sp.dy), span(e.cols, sp.dx));
        let center = [sz / 2.0, sy / 2.0, sx / 2.0];
        let brain = Ellipsoid {
            center,
            semi_axes: [
                (sz / 2.0 + sp.dz * 0.5).max(sp.dz),
                (0.44 * sy).max(sp.dy),
                (0.40 * sx).max(sp.dx),
            ],
        };
        let frac = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
        let semi = [
            brain.semi_axes[0] * frac(&mut rng, 0.30, 0.45),
            brain.semi_axes[1] * frac(&mut rng, 0.28, 0.40),
            brain.semi_axes[2] * frac(&mut rng, 0.28, 0.40),
        ];
        // keep the lesion centre well inside so the whole ellipsoid fits
        let mut lesion_center = center;
        for i in 1..3 {
            let room = (brain.semi_axes[i] - semi[i]) * 0.45;
            lesion_center[i] += frac(&mut rng, -room, room);
        }
        let label = if rng.random::<bool>() { 1 } else { 3 };
        PhantomSpec {
            case_id: format!("case_{index:03}"),
            extents: e,
            spacing: sp,
            brain,
            lesions: vec![LesionSpec {
                shape: Ellipsoid {
                    center: lesion_center,
                    semi_axes: semi,
                },
                offset_hu: self.lesion_offset_hu,
                label,
            }],
            background_hu: -1000.0,
            brain_hu: 35.0,
            noise_std: self.noise_std,
            seed: seed.wrapping_add(index as u64),
            label_schema: LabelSchema::aisd(),
        }
    }
}

/// Writes `cases` phantoms under `out_dir/{images,masks}` plus `out_dir/manifest.json`,
/// with folds assigned by the manifest seed.
pub fn write_phantom_dataset(out_dir: &Path, cases: usize, seed: u64, config: &PhantomDatasetConfig, folds: usize) -> Result<DatasetManifest> {
    if cases == 0 {
        return Err(Error::Config("phantom dataset needs at least one case".into()));
    }
    let mut records = Vec::with_capacity(cases);
    for i in 0..cases {
        let spec = config.case_spec(i, seed);
        let (vol, mask) = generate_phantom(&spec)?;
        let image = Path::new("images").join(format!("{}.nii.gz", spec.case_id));
        let mask_path = Path::new("masks").join(format!("{}.nii.gz", spec.case_id));
        nifti::write_volume(&vol, out_dir.join(&image))?;
        nifti::write_mask(&mask, out_dir.join(&mask_path))?;
        records.push(CaseRecord {
            case_id: spec.case_id,
            image_path: image,
            mask_path: Some(mask_path),
            split_tag: SplitTag::Unassigned,
            fold_index: None,
        });
    }
    let mut manifest = DatasetManifest::new("phantom", seed, LabelSchema::aisd(), records)?;
    if folds >= 2 && cases >= folds {
        manifest = manifest.assign_folds(folds, seed)?;
    }
    manifest.save(out_dir.join("manifest.json"))?;
    manifest.root = out_dir.to_path_buf();
    Ok(manifest)
}
