//! Shared domain types: volumes, label masks, label schemas and case records.
//!
//! Grids are stored row-major in `(slice, row, col)` order, so the column index
//! varies fastest. This is the same memory order as a NIfTI file whose first
//! axis is the column axis.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical voxel size in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spacing {
    /// Column spacing.
    pub dx: f64,
    /// Row spacing.
    pub dy: f64,
    /// Slice thickness.
    pub dz: f64,
}

impl Spacing {
    pub fn new(dx: f64, dy: f64, dz: f64) -> Result<Self> {
        let s = Spacing { dx, dy, dz };
        s.validate()?;
        Ok(s)
    }

    pub fn isotropic(v: f64) -> Result<Self> {
        Self::new(v, v, v)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("dx", self.dx), ("dy", self.dy), ("dz", self.dz)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Data(format!("spacing {name}={v} must be positive and finite")));
            }
        }
        Ok(())
    }

    pub fn in_plane(&self) -> PlaneSpacing {
        PlaneSpacing { dy: self.dy, dx: self.dx }
    }
}

/// In-plane spacing of a 2-D image: `dy` between rows, `dx` between columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneSpacing {
    pub dy: f64,
    pub dx: f64,
}

impl PlaneSpacing {
    pub fn new(dy: f64, dx: f64) -> Result<Self> {
        for v in [dy, dx] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("spacing {v} must be positive and finite")));
            }
        }
        Ok(PlaneSpacing { dy, dx })
    }
}

/// Grid extents in `(slices, rows, cols)` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Extents {
    pub slices: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Extents {
    pub fn new(slices: usize, rows: usize, cols: usize) -> Self {
        Extents { slices, rows, cols }
    }

    pub fn len(&self) -> usize {
        self.slices * self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn index(&self, slice: usize, row: usize, col: usize) -> usize {
        (slice * self.rows + row) * self.cols + col
    }

    fn validate(&self) -> Result<()> {
        if self.slices == 0 || self.rows == 0 || self.cols == 0 {
            return Err(Error::Data(format!("grid extents {self:?} must all be at least 1")));
        }
        Ok(())
    }
}

impl std::fmt::Display for Extents {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.slices, self.rows, self.cols)
    }
}

/// Orientation fields of the source file, carried along verbatim and never interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Orientation {
    pub qform_code: i16,
    pub sform_code: i16,
    /// `pixdim[0]`, the qform handedness factor.
    pub qfac: f32,
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub srow_x: [f32; 4],
    pub srow_y: [f32; 4],
    pub srow_z: [f32; 4],
    pub xyzt_units: u8,
}

/// A CT scan in Hounsfield units.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    data: Vec<f32>,
    extents: Extents,
    spacing: Spacing,
    case_id: String,
    orientation: Option<Orientation>,
}

impl Volume {
    pub fn new(case_id: impl Into<String>, extents: Extents, spacing: Spacing, data: Vec<f32>) -> Result<Self> {
        extents.validate()?;
        spacing.validate()?;
        if data.len() != extents.len() {
            return Err(Error::Shape(format!(
                "volume data has {} voxels, extents {extents} need {}",
                data.len(),
                extents.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite voxel at flat index {i}")));
        }
        Ok(Volume {
            data,
            extents,
            spacing,
            case_id: case_id.into(),
            orientation: None,
        })
    }

    pub fn with_orientation(mut self, orientation: Option<Orientation>) -> Self {
        self.orientation = orientation;
        self
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn extents(&self) -> Extents {
        self.extents
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn case_id(&self) -> &str {
        &self.case_id
    }

    pub fn orientation(&self) -> Option<&Orientation> {
        self.orientation.as_ref()
    }

    pub fn get(&self, slice: usize, row: usize, col: usize) -> f32 {
        self.data[self.extents.index(slice, row, col)]
    }

    pub fn slice_extract(&self, slice_index: usize) -> Result<Plane<f32>> {
        slice_extract(self, slice_index)
    }

    /// Rebuilds a volume from slices that share extents and spacing.
    pub fn from_planes(case_id: impl Into<String>, dz: f64, planes: &[Plane<f32>]) -> Result<Self> {
        let (extents, spacing, data) = stack_planes(dz, planes)?;
        Volume::new(case_id, extents, spacing, data)
    }
}

fn stack_planes<T: Copy>(dz: f64, planes: &[Plane<T>]) -> Result<(Extents, Spacing, Vec<T>)> {
    let first = planes
        .first()
        .ok_or_else(|| Error::Shape("cannot stack zero slices".into()))?;
    let mut data = Vec::with_capacity(first.data.len() * planes.len());
    for p in planes {
        if p.rows != first.rows || p.cols != first.cols {
            return Err(Error::Shape(format!(
                "slice extents {}x{} differ from {}x{}",
                p.rows, p.cols, first.rows, first.cols
            )));
        }
        data.extend_from_slice(&p.data);
    }
    let extents = Extents::new(planes.len(), first.rows, first.cols);
    let spacing = Spacing::new(first.spacing.dx, first.spacing.dy, dz)?;
    Ok((extents, spacing, data))
}

/// A single 2-D image with its in-plane spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane<T> {
    pub rows: usize,
    pub cols: usize,
    pub spacing: PlaneSpacing,
    pub data: Vec<T>,
}

impl<T: Copy> Plane<T> {
    pub fn new(rows: usize, cols: usize, spacing: PlaneSpacing, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("plane extents {rows}x{cols} must be at least 1")));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "plane data has {} values, {rows}x{cols} needs {}",
                data.len(),
                rows * cols
            )));
        }
        Ok(Plane { rows, cols, spacing, data })
    }

    pub fn filled(rows: usize, cols: usize, spacing: PlaneSpacing, value: T) -> Self {
        Plane {
            rows,
            cols,
            spacing,
            data: vec![value; rows * cols],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: T) {
        self.data[row * self.cols + col] = v;
    }
}

/// One `(id, name)` entry of a label schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub id: u8,
    pub name: String,
}

/// Ordered set of label ids present in a mask. Id 0 is always "background".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<LabelEntry>", into = "Vec<LabelEntry>")]
pub struct LabelSchema {
    entries: Vec<LabelEntry>,
}

const AISD_LABELS: &str = include_str!("../data/aisd_labels.json");

impl LabelSchema {
    pub fn new(entries: Vec<LabelEntry>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.id) {
                return Err(Error::Schema(format!("duplicate label id {}", e.id)));
            }
        }
        match entries.iter().find(|e| e.id == 0) {
            Some(bg) if bg.name == "background" => {}
            Some(bg) => {
                return Err(Error::Schema(format!(
                    "label 0 must be named \"background\", found {:?}",
                    bg.name
                )))
            }
            None => return Err(Error::Schema("label 0 (background) missing".into())),
        }
        Ok(LabelSchema { entries })
    }

    /// Background plus one foreground label with id 1.
    pub fn binary(foreground: &str) -> Self {
        LabelSchema {
            entries: vec![
                LabelEntry { id: 0, name: "background".into() },
                LabelEntry { id: 1, name: foreground.into() },
            ],
        }
    }

    /// The five-class schema shipped with the crate: background, clear acute,
    /// remote, blurred acute and unspecified infarct.
    pub fn aisd() -> Self {
        let entries: Vec<LabelEntry> = serde_json::from_str(AISD_LABELS).expect("bundled label schema is valid JSON");
        LabelSchema::new(entries).expect("bundled label schema is valid")
    }

    pub fn entries(&self) -> &[LabelEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = u8> + '_ {
        self.entries.iter().map(|e| e.id)
    }

    pub fn contains(&self, id: u8) -> bool {
        self.entries.iter().any(|e| e.id == id)
    }

    pub fn name(&self, id: u8) -> Option<&str> {
        self.entries.iter().find(|e| e.id == id).map(|e| e.name.as_str())
    }

    /// True when the schema is exactly `{0, 1}`.
    pub fn is_binary(&self) -> bool {
        self.entries.len() == 2 && self.contains(0) && self.contains(1)
    }

    fn lookup_table(&self) -> [bool; 256] {
        let mut table = [false; 256];
        for id in self.ids() {
            table[id as usize] = true;
        }
        table
    }
}

impl TryFrom<Vec<LabelEntry>> for LabelSchema {
    type Error = Error;
    fn try_from(entries: Vec<LabelEntry>) -> Result<Self> {
        LabelSchema::new(entries)
    }
}

impl From<LabelSchema> for Vec<LabelEntry> {
    fn from(s: LabelSchema) -> Self {
        s.entries
    }
}

/// Integer label grid aligned with a [`Volume`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    data: Vec<u8>,
    extents: Extents,
    spacing: Spacing,
    schema: LabelSchema,
    orientation: Option<Orientation>,
}

impl LabelMask {
    pub fn new(extents: Extents, spacing: Spacing, data: Vec<u8>, schema: LabelSchema) -> Result<Self> {
        extents.validate()?;
        spacing.validate()?;
        if data.len() != extents.len() {
            return Err(Error::Shape(format!(
                "mask data has {} voxels, extents {extents} need {}",
                data.len(),
                extents.len()
            )));
        }
        let known = schema.lookup_table();
        if let Some(v) = data.iter().find(|&&v| !known[v as usize]) {
            return Err(Error::Schema(format!("mask contains label {v} not in schema")));
        }
        Ok(LabelMask {
            data,
            extents,
            spacing,
            schema,
            orientation: None,
        })
    }

    pub fn zeros(extents: Extents, spacing: Spacing, schema: LabelSchema) -> Result<Self> {
        LabelMask::new(extents, spacing, vec![0; extents.len()], schema)
    }

    pub fn with_orientation(mut self, orientation: Option<Orientation>) -> Self {
        self.orientation = orientation;
        self
    }

    pub fn from_planes(dz: f64, planes: &[Plane<u8>], schema: LabelSchema) -> Result<Self> {
        let (extents, spacing, data) = stack_planes(dz, planes)?;
        LabelMask::new(extents, spacing, data, schema)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn extents(&self) -> Extents {
        self.extents
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn schema(&self) -> &LabelSchema {
        &self.schema
    }

    pub fn orientation(&self) -> Option<&Orientation> {
        self.orientation.as_ref()
    }

    pub fn get(&self, slice: usize, row: usize, col: usize) -> u8 {
        self.data[self.extents.index(slice, row, col)]
    }

    pub fn slice(&self, slice_index: usize) -> Result<Plane<u8>> {
        if slice_index >= self.extents.slices {
            return Err(Error::Bounds {
                index: slice_index,
                extent: self.extents.slices,
            });
        }
        let n = self.extents.plane_len();
        let start = slice_index * n;
        Ok(Plane {
            rows: self.extents.rows,
            cols: self.extents.cols,
            spacing: self.spacing.in_plane(),
            data: self.data[start..start + n].to_vec(),
        })
    }

    pub fn foreground_voxel_count(&self, label: u8) -> Result<usize> {
        foreground_voxel_count(self, label)
    }
}

/// Split membership of a case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
    #[default]
    Unassigned,
}

/// One entry of a dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    #[serde(rename = "image")]
    pub image_path: PathBuf,
    #[serde(rename = "mask", default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
    #[serde(rename = "split", default)]
    pub split_tag: SplitTag,
    #[serde(rename = "fold", default, skip_serializing_if = "Option::is_none")]
    pub fold_index: Option<usize>,
}

/// Lookup table from source label id to target label id. Ids without an entry pass through.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelRemap {
    #[serde(default)]
    pub map: BTreeMap<u8, u8>,
    /// Optional names for target ids. Otherwise the source schema's name for that id is reused.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub names: BTreeMap<u8, String>,
}

impl LabelRemap {
    pub fn new(pairs: impl IntoIterator<Item = (u8, u8)>) -> Self {
        LabelRemap {
            map: pairs.into_iter().collect(),
            names: BTreeMap::new(),
        }
    }

    pub fn identity() -> Self {
        LabelRemap::default()
    }

    pub fn with_name(mut self, id: u8, name: &str) -> Self {
        self.names.insert(id, name.to_string());
        self
    }

    /// Clear and blurred acute infarcts become foreground; remote and unspecified infarcts become background.
    pub fn acute_infarct() -> Self {
        LabelRemap::new([(1, 1), (3, 1), (2, 0), (4, 0)]).with_name(1, "acute infarct")
    }

    /// Drops entries whose source id is absent from `schema`.
    pub fn restrict_to(&self, schema: &LabelSchema) -> Self {
        LabelRemap {
            map: self.map.iter().filter(|(s, _)| schema.contains(**s)).map(|(s, t)| (*s, *t)).collect(),
            names: self.names.clone(),
        }
    }

    fn table(&self) -> [u8; 256] {
        let mut t = [0u8; 256];
        for (i, v) in t.iter_mut().enumerate() {
            *v = i as u8;
        }
        for (&s, &d) in &self.map {
            t[s as usize] = d;
        }
        t
    }
}

/// Applies `remap` voxelwise. The output schema lists the target ids and every unmapped source id.
pub fn remap_labels(mask: &LabelMask, remap: &LabelRemap) -> Result<LabelMask> {
    for &src in remap.map.keys() {
        if !mask.schema.contains(src) {
            return Err(Error::Schema(format!("remap source id {src} is not in the mask schema")));
        }
    }
    let table = remap.table();
    let mut ids: BTreeSet<u8> = mask.schema.ids().map(|id| table[id as usize]).collect();
    ids.insert(0);
    let entries = ids
        .into_iter()
        .map(|id| {
            let name = if id == 0 {
                "background".to_string()
            } else if let Some(n) = remap.names.get(&id) {
                n.clone()
            } else {
                mask.schema.name(id).map(str::to_string).unwrap_or_else(|| format!("label_{id}"))
            };
            LabelEntry { id, name }
        })
        .collect();
    let schema = LabelSchema::new(entries)?;
    let data = mask.data.iter().map(|&v| table[v as usize]).collect();
    Ok(LabelMask {
        data,
        extents: mask.extents,
        spacing: mask.spacing,
        schema,
        orientation: mask.orientation,
    })
}

pub fn foreground_voxel_count(mask: &LabelMask, label: u8) -> Result<usize> {
    if !mask.schema.contains(label) {
        return Err(Error::Schema(format!("label {label} is not in the mask schema")));
    }
    Ok(mask.data.iter().filter(|&&v| v == label).count())
}

/// Returns the `(row, col)` plane at `slice_index` with the volume's in-plane spacing.
pub fn slice_extract(volume: &Volume, slice_index: usize) -> Result<Plane<f32>> {
    let e = volume.extents;
    if slice_index >= e.slices {
        return Err(Error::Bounds {
            index: slice_index,
            extent: e.slices,
        });
    }
    let n = e.plane_len();
    let start = slice_index * n;
    Ok(Plane {
        rows: e.rows,
        cols: e.cols,
        spacing: volume.spacing.in_plane(),
        data: volume.data[start..start + n].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit() -> Spacing {
        Spacing::isotropic(1.0).unwrap()
    }

    fn aisd_mask(extents: Extents, data: Vec<u8>) -> LabelMask {
        LabelMask::new(extents, unit(), data, LabelSchema::aisd()).unwrap()
    }

    #[test]
    fn bundled_schema_ids() {
        let s = LabelSchema::aisd();
        let ids: Vec<u8> = s.ids().collect();
        assert_eq!(ids, vec![0, 1, 2, 3, 4]);
        assert_eq!(s.name(0), Some("background"));
    }

    #[test]
    fn schema_requires_background() {
        let err = LabelSchema::new(vec![LabelEntry { id: 1, name: "x".into() }]).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
        let err = LabelSchema::new(vec![
            LabelEntry { id: 0, name: "background".into() },
            LabelEntry { id: 0, name: "again".into() },
        ])
        .unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn acute_remap_yields_binary_mask() {
        let e = Extents::new(1, 1, 5);
        let m = aisd_mask(e, vec![0, 1, 2, 3, 4]);
        let out = remap_labels(&m, &LabelRemap::acute_infarct()).unwrap();
        assert_eq!(out.data(), &[0, 1, 0, 1, 0]);
        assert!(out.schema().is_binary());
        assert_eq!(out.schema().name(1), Some("acute infarct"));
    }

    #[test]
    fn identity_remap_is_voxel_identical() {
        let e = Extents::new(2, 2, 2);
        let m = aisd_mask(e, vec![0, 1, 2, 3, 4, 0, 1, 2]);
        let out = remap_labels(&m, &LabelRemap::identity()).unwrap();
        assert_eq!(out.data(), m.data());
        assert_eq!(out.schema(), m.schema());
    }

    #[test]
    fn all_zero_mask_is_fixed_point() {
        let e = Extents::new(2, 3, 3);
        let m = aisd_mask(e, vec![0; e.len()]);
        let out = remap_labels(&m, &LabelRemap::acute_infarct()).unwrap();
        assert!(out.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn unknown_remap_source_is_schema_error() {
        let m = LabelMask::zeros(Extents::new(1, 2, 2), unit(), LabelSchema::binary("lesion")).unwrap();
        let err = remap_labels(&m, &LabelRemap::new([(3, 1)])).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn mask_rejects_labels_outside_schema() {
        let err = LabelMask::new(Extents::new(1, 1, 2), unit(), vec![0, 7], LabelSchema::binary("l")).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn foreground_counts() {
        let e = Extents::new(4, 4, 4);
        let zeros = LabelMask::zeros(e, unit(), LabelSchema::binary("l")).unwrap();
        assert_eq!(zeros.foreground_voxel_count(1).unwrap(), 0);

        let mut data = vec![0u8; e.len()];
        data[e.index(1, 2, 3)] = 1;
        let one = LabelMask::new(e, unit(), data, LabelSchema::binary("l")).unwrap();
        assert_eq!(one.foreground_voxel_count(1).unwrap(), 1);

        let e8 = Extents::new(8, 8, 8);
        let mut data = vec![0u8; e8.len()];
        for s in 3..5 {
            for r in 2..4 {
                for c in 5..7 {
                    data[e8.index(s, r, c)] = 1;
                }
            }
        }
        let block = LabelMask::new(e8, unit(), data, LabelSchema::binary("l")).unwrap();
        // brute-force scan over (s, r, c)
        let mut expected = 0;
        for s in 0..8 {
            for r in 0..8 {
                for c in 0..8 {
                    if block.get(s, r, c) == 1 {
                        expected += 1;
                    }
                }
            }
        }
        assert_eq!(expected, 8);
        assert_eq!(block.foreground_voxel_count(1).unwrap(), expected);
        assert!(matches!(block.foreground_voxel_count(9), Err(Error::Schema(_))));
    }

    #[test]
    fn slice_extraction() {
        let e = Extents::new(3, 2, 2);
        let data: Vec<f32> = (0..12).map(|v| v as f32 * 1.5).collect();
        let spacing = Spacing::new(0.5, 0.75, 5.0).unwrap();
        let v = Volume::new("c", e, spacing, data.clone()).unwrap();
        let mid = v.slice_extract(1).unwrap();
        assert_eq!(mid.data, data[4..8].to_vec());
        assert_eq!(mid.spacing, PlaneSpacing { dy: 0.75, dx: 0.5 });
        assert!(matches!(v.slice_extract(3), Err(Error::Bounds { index: 3, extent: 3 })));

        let single = Volume::new("s", Extents::new(1, 2, 2), spacing, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(single.slice_extract(0).unwrap().data, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn volume_rejects_nan() {
        let err = Volume::new("x", Extents::new(1, 1, 2), unit(), vec![0.0, f32::NAN]).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn spacing_must_be_positive() {
        assert!(Spacing::new(1.0, 0.0, 1.0).is_err());
        assert!(Spacing::new(1.0, 1.0, f64::INFINITY).is_err());
    }

    proptest! {
        #[test]
        fn remap_preserves_geometry_and_is_idempotent(
            data in proptest::collection::vec(0u8..5, 27),
            targets in proptest::collection::vec(0u8..2, 4),
        ) {
            let e = Extents::new(3, 3, 3);
            let spacing = Spacing::new(0.4, 0.6, 5.0).unwrap();
            let m = LabelMask::new(e, spacing, data, LabelSchema::aisd()).unwrap();
            // targets lie in {0, 1}, both fixed points of the table
            let mut remap = LabelRemap::new([(1, 1)]);
            for (src, t) in (1u8..5).zip(targets) {
                if src != 1 {
                    remap.map.insert(src, t);
                }
            }
            let once = remap_labels(&m, &remap).unwrap();
            prop_assert_eq!(once.extents(), m.extents());
            prop_assert_eq!(once.spacing(), m.spacing());
            let twice = remap_labels(&once, &remap.restrict_to(once.schema())).unwrap();
            prop_assert_eq!(twice.data(), once.data());
        }

        #[test]
        fn label_counts_sum_to_total(data in proptest::collection::vec(0u8..5, 1..200)) {
            let n = data.len();
            let m = LabelMask::new(Extents::new(1, 1, n), unit(), data, LabelSchema::aisd()).unwrap();
            let total: usize = m.schema().ids().map(|id| m.foreground_voxel_count(id).unwrap()).sum();
            prop_assert_eq!(total, n);
        }
    }
}
