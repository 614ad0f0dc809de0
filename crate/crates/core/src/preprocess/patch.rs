use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Plane;

/// How one axis was centre-padded or centre-cropped to the patch size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AxisAdjust {
    pub original: usize,
    pub pad_before: usize,
    pub pad_after: usize,
    pub crop_before: usize,
    pub crop_after: usize,
}

impl AxisAdjust {
    fn new(original: usize, target: usize) -> Self {
        let mut a = AxisAdjust {
            original,
            ..AxisAdjust::default()
        };
        if original < target {
            let d = target - original;
            a.pad_before = d / 2;
            a.pad_after = d - d / 2;
        } else {
            let d = original - target;
            a.crop_before = d / 2;
            a.crop_after = d - d / 2;
        }
        a
    }

    fn target(&self) -> usize {
        self.original + self.pad_before + self.pad_after - self.crop_before - self.crop_after
    }

    /// Maps an original index to its patch index, if it survived cropping.
    fn to_patch(&self, i: usize) -> Option<usize> {
        let shifted = (i + self.pad_before).checked_sub(self.crop_before)?;
        (shifted < self.target()).then_some(shifted)
    }
}

/// Invertible record of a [`shape_to_patch`] call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub rows: AxisAdjust,
    pub cols: AxisAdjust,
}

impl PatchRecord {
    pub fn is_identity(&self) -> bool {
        [self.rows, self.cols]
            .iter()
            .all(|a| a.pad_before + a.pad_after + a.crop_before + a.crop_after == 0)
    }

    pub fn patch_extents(&self) -> (usize, usize) {
        (self.rows.target(), self.cols.target())
    }

    /// Places a patch-shaped plane back into the original geometry; cropped-away
    /// regions are filled with `fill`.
    pub fn restore<T: Copy>(&self, patch: &Plane<T>, fill: T) -> Result<Plane<T>> {
        if (patch.rows, patch.cols) != self.patch_extents() {
            return Err(Error::Shape(format!(
                "patch is {}x{}, record expects {:?}",
                patch.rows,
                patch.cols,
                self.patch_extents()
            )));
        }
        let mut out = Plane::filled(self.rows.original, self.cols.original, patch.spacing, fill);
        for r in 0..self.rows.original {
            let Some(pr) = self.rows.to_patch(r) else { continue };
            for c in 0..self.cols.original {
                if let Some(pc) = self.cols.to_patch(c) {
                    out.set(r, c, patch.get(pr, pc));
                }
            }
        }
        Ok(out)
    }
}

/// Centre-pads with `pad_value` or centre-crops each axis to the patch size.
pub fn shape_to_patch<T: Copy>(image: &Plane<T>, patch: (usize, usize), pad_value: T) -> Result<(Plane<T>, PatchRecord)> {
    if patch.0 == 0 || patch.1 == 0 {
        return Err(Error::Config(format!("patch size {patch:?} must be non-zero")));
    }
    let record = PatchRecord {
        rows: AxisAdjust::new(image.rows, patch.0),
        cols: AxisAdjust::new(image.cols, patch.1),
    };
    if record.is_identity() {
        return Ok((image.clone(), record));
    }
    let mut out = Plane::filled(patch.0, patch.1, image.spacing, pad_value);
    for r in 0..image.rows {
        let Some(pr) = record.rows.to_patch(r) else { continue };
        for c in 0..image.cols {
            if let Some(pc) = record.cols.to_patch(c) {
                out.set(pr, pc, image.get(r, c));
            }
        }
    }
    Ok((out, record))
}
