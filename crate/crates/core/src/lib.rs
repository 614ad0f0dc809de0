//! Infarct segmentation on non-contrast CT: preprocessing, a residual encoder
//! U-Net trained with a soft Dice loss, and Dice/IoU evaluation with
//! outlier-adjusted aggregates.

pub mod error;
pub mod evaluation;
pub mod fsutil;
pub mod io;
pub mod model;
pub mod network;
pub mod preprocess;
pub mod report;
pub mod training;

pub use error::{Error, ErrorKind, Result, ResultExt};
pub use model::{
    foreground_voxel_count, remap_labels, slice_extract, CaseRecord, Extents, LabelEntry, LabelMask, LabelRemap,
    LabelSchema, Orientation, Plane, PlaneSpacing, SplitTag, Spacing, Volume,
};
