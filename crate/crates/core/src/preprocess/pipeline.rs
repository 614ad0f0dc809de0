//! Per-case preprocessing and its on-disk cache.
//!
//! Layout of a preprocessed directory:
//!
//! ```text
//! dataset.json              index: fingerprint, config and one entry per case
//! cases/<id>_img.nii.gz     normalised, resampled, patch-shaped image
//! cases/<id>_seg.nii.gz     binary mask in the same geometry (when available)
//! cases/<id>.json           sidecar with the fingerprint and geometry record
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ResultExt};
use crate::fsutil;
use crate::io::{nifti, DatasetManifest};
use crate::model::{remap_labels, Extents, LabelMask, LabelRemap, LabelSchema, Plane, PlaneSpacing, Spacing, Volume};
use crate::preprocess::{
    compute_fingerprint, ct_normalize, normalize_value, resample_image_to, resample_mask_to, shape_to_patch,
    target_extent, DatasetFingerprint, PatchRecord, PreprocessConfig,
};

/// Everything needed to map a prediction back onto the original scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSidecar {
    pub case_id: String,
    pub fingerprint: DatasetFingerprint,
    pub original_spacing: Spacing,
    pub original_extents: Extents,
    /// In-plane extents after resampling, before patch shaping.
    pub resampled_extents: [usize; 2],
    pub target_spacing: PlaneSpacing,
    pub patch: PatchRecord,
    pub pad_value: f32,
}

#[derive(Debug, Clone)]
pub struct PreprocessedCase {
    pub image: Volume,
    pub mask: Option<LabelMask>,
    pub sidecar: CaseSidecar,
}

/// Normalises, resamples and patch-shapes one case. `mask` must be binary.
pub fn preprocess_case(
    volume: &Volume,
    mask: Option<&LabelMask>,
    fingerprint: &DatasetFingerprint,
    config: &PreprocessConfig,
) -> Result<PreprocessedCase> {
    config.validate()?;
    let e = volume.extents();
    if let Some(m) = mask {
        if m.extents() != e {
            return Err(Error::Shape(format!("mask extents {} differ from image extents {e}", m.extents())));
        }
        if !m.data().iter().all(|&v| v <= 1) {
            return Err(Error::Contract("preprocessing expects a binary mask; remap labels first".into()));
        }
    }
    let sp = volume.spacing();
    let target = config.target_spacing;
    let (rows, cols) = if sp.in_plane() == target {
        (e.rows, e.cols)
    } else {
        (target_extent(e.rows, sp.dy, target.dy)?, target_extent(e.cols, sp.dx, target.dx)?)
    };
    let pad_value = normalize_value(fingerprint.p_low, fingerprint, config.epsilon) as f32;
    let normalized = ct_normalize(volume, fingerprint, config)?;
    let patch = (config.patch_size[0], config.patch_size[1]);

    let mut image_planes = Vec::with_capacity(e.slices);
    let mut mask_planes = Vec::with_capacity(e.slices);
    let mut record = None;
    for s in 0..e.slices {
        let plane = normalized.slice_extract(s)?;
        let resampled = resample_image_to(&plane, rows, cols, config.image_order)?;
        let (mut shaped, rec) = shape_to_patch(&resampled, patch, pad_value)?;
        shaped.spacing = target;
        image_planes.push(shaped);
        record = Some(rec);
        if let Some(m) = mask {
            let mp = m.slice(s)?;
            let resampled = resample_mask_to(&mp, rows, cols, config.mask_order, config.mask_threshold)?;
            let (mut shaped, _) = shape_to_patch(&resampled, patch, 0u8)?;
            shaped.spacing = target;
            mask_planes.push(shaped);
        }
    }
    let image = Volume::from_planes(volume.case_id(), sp.dz, &image_planes)?.with_orientation(volume.orientation().copied());
    let mask = match mask {
        Some(m) => Some(
            LabelMask::from_planes(sp.dz, &mask_planes, binary_schema(m.schema()))?.with_orientation(m.orientation().copied()),
        ),
        None => None,
    };
    Ok(PreprocessedCase {
        image,
        mask,
        sidecar: CaseSidecar {
            case_id: volume.case_id().to_string(),
            fingerprint: *fingerprint,
            original_spacing: sp,
            original_extents: e,
            resampled_extents: [rows, cols],
            target_spacing: target,
            patch: record.expect("volume has at least one slice"),
            pad_value,
        },
    })
}

fn binary_schema(schema: &LabelSchema) -> LabelSchema {
    LabelSchema::binary(schema.name(1).unwrap_or("lesion"))
}

/// Maps a binary prediction in patch geometry back to the original scan geometry.
pub fn restore_prediction(pred: &LabelMask, sidecar: &CaseSidecar, config: &PreprocessConfig) -> Result<LabelMask> {
    let (pr, pc) = sidecar.patch.patch_extents();
    let pe = pred.extents();
    let oe = sidecar.original_extents;
    if pe.rows != pr || pe.cols != pc || pe.slices != oe.slices {
        return Err(Error::Shape(format!(
            "prediction extents {pe} do not match patch {}x{}x{}",
            oe.slices, pr, pc
        )));
    }
    let mut planes = Vec::with_capacity(oe.slices);
    for s in 0..oe.slices {
        let mut p = pred.slice(s)?;
        p.spacing = sidecar.target_spacing;
        let unpatched = sidecar.patch.restore(&p, 0u8)?;
        let mut back = resample_mask_to(&unpatched, oe.rows, oe.cols, config.mask_order, config.mask_threshold)?;
        back.spacing = sidecar.original_spacing.in_plane();
        planes.push(back);
    }
    Ok(LabelMask::from_planes(sidecar.original_spacing.dz, &planes, pred.schema().clone())?
        .with_orientation(pred.orientation().copied()))
}

/// One preprocessed case as listed in `dataset.json`. Paths are relative to the index directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessedEntry {
    pub case_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<usize>,
    pub image: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    pub sidecar: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessedIndex {
    pub fingerprint: DatasetFingerprint,
    pub config: PreprocessConfig,
    pub cases: Vec<PreprocessedEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl PreprocessedIndex {
    pub const FILE_NAME: &'static str = "dataset.json";

    pub fn load(dir: &Path) -> Result<Self> {
        let mut idx: PreprocessedIndex = fsutil::read_json(&dir.join(Self::FILE_NAME))?;
        idx.root = dir.to_path_buf();
        Ok(idx)
    }

    pub fn save(&self) -> Result<()> {
        fsutil::write_json_atomic(&self.root.join(Self::FILE_NAME), self)
    }

    pub fn entry(&self, case_id: &str) -> Option<&PreprocessedEntry> {
        self.cases.iter().find(|c| c.case_id == case_id)
    }

    pub fn path(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    /// Checks that every listed file exists; run before training starts.
    pub fn check_files(&self, require_masks: bool) -> Result<()> {
        for e in &self.cases {
            let mut files = vec![&e.image, &e.sidecar];
            match &e.mask {
                Some(m) => files.push(m),
                None if require_masks => {
                    return Err(Error::Data("preprocessed case has no mask".into()).for_case(&e.case_id))
                }
                None => {}
            }
            for f in files {
                let p = self.path(f);
                if !p.is_file() {
                    return Err(Error::Data(format!("missing preprocessed file {}", p.display())).for_case(&e.case_id));
                }
            }
        }
        Ok(())
    }

    pub fn load_image(&self, entry: &PreprocessedEntry) -> Result<Volume> {
        nifti::read_volume(self.path(&entry.image), &entry.case_id).for_case(&entry.case_id)
    }

    pub fn load_mask(&self, entry: &PreprocessedEntry) -> Result<Option<LabelMask>> {
        match &entry.mask {
            Some(m) => nifti::read_mask(self.path(m), &LabelSchema::binary("lesion"))
                .map(Some)
                .for_case(&entry.case_id),
            None => Ok(None),
        }
    }

    pub fn load_sidecar(&self, entry: &PreprocessedEntry) -> Result<CaseSidecar> {
        fsutil::read_json(&self.path(&entry.sidecar)).for_case(&entry.case_id)
    }
}

/// Reads a case's image and, if present, its mask remapped to the binary task.
pub fn load_case(manifest: &DatasetManifest, case_id: &str, remap: &LabelRemap) -> Result<(Volume, Option<LabelMask>)> {
    let rec = manifest
        .case(case_id)
        .ok_or_else(|| Error::Data(format!("case {case_id} not in manifest")))?;
    let image = nifti::read_volume(manifest.resolve(&rec.image_path), case_id).for_case(case_id)?;
    let mask = match &rec.mask_path {
        Some(p) => {
            let raw = nifti::read_mask(manifest.resolve(p), &manifest.label_schema).for_case(case_id)?;
            let bin = remap_labels(&raw, remap).for_case(case_id)?;
            if bin.data().iter().any(|&v| v > 1) {
                return Err(Error::Schema("label remap does not produce a binary mask".into()).for_case(case_id));
            }
            if bin.extents() != image.extents() {
                return Err(Error::Shape(format!(
                    "mask extents {} differ from image extents {}",
                    bin.extents(),
                    image.extents()
                ))
                .for_case(case_id));
            }
            Some(bin)
        }
        None => None,
    };
    Ok((image, mask))
}

/// Fingerprint over every voxel of the manifest's training-split images.
pub fn compute_dataset_fingerprint(manifest: &DatasetManifest) -> Result<DatasetFingerprint> {
    let mut volumes = Vec::new();
    for rec in manifest.training_cases() {
        volumes.push(nifti::read_volume(manifest.resolve(&rec.image_path), &rec.case_id).for_case(&rec.case_id)?);
    }
    compute_fingerprint(volumes.iter())
}

/// Preprocesses every manifest case into `out_dir` and writes the index.
pub fn preprocess_dataset(
    manifest: &DatasetManifest,
    remap: &LabelRemap,
    fingerprint: &DatasetFingerprint,
    config: &PreprocessConfig,
    out_dir: &Path,
) -> Result<PreprocessedIndex> {
    config.validate()?;
    fingerprint.validate()?;
    let mut entries = Vec::with_capacity(manifest.cases.len());
    for rec in &manifest.cases {
        let id = rec.case_id.as_str();
        let (image, mask) = load_case(manifest, id, remap)?;
        let pre = preprocess_case(&image, mask.as_ref(), fingerprint, config).for_case(id)?;
        let image_rel = PathBuf::from("cases").join(format!("{id}_img.nii.gz"));
        let sidecar_rel = PathBuf::from("cases").join(format!("{id}.json"));
        nifti::write_volume(&pre.image, out_dir.join(&image_rel))?;
        fsutil::write_json_atomic(&out_dir.join(&sidecar_rel), &pre.sidecar)?;
        let mask_rel = match &pre.mask {
            Some(m) => {
                let rel = PathBuf::from("cases").join(format!("{id}_seg.nii.gz"));
                nifti::write_mask(m, out_dir.join(&rel))?;
                Some(rel)
            }
            None => None,
        };
        entries.push(PreprocessedEntry {
            case_id: id.to_string(),
            fold: rec.fold_index,
            image: image_rel,
            mask: mask_rel,
            sidecar: sidecar_rel,
        });
    }
    let index = PreprocessedIndex {
        fingerprint: *fingerprint,
        config: config.clone(),
        cases: entries,
        root: out_dir.to_path_buf(),
    };
    index.save()?;
    Ok(index)
}

/// In-memory 2-D slice pairs for one case, in patch geometry.
pub fn case_planes(image: &Volume, mask: Option<&LabelMask>) -> Result<Vec<(Plane<f32>, Option<Plane<u8>>)>> {
    (0..image.extents().slices)
        .map(|s| Ok((image.slice_extract(s)?, mask.map(|m| m.slice(s)).transpose()?)))
        .collect()
}
