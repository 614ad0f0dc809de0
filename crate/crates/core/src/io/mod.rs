//! Reading and writing images, dataset manifests and synthetic phantoms.

pub mod manifest;
pub mod nifti;
pub mod phantom;

pub use manifest::{assign_folds, DatasetManifest, SplitMix64};
pub use nifti::{read_mask, read_volume, write_mask, write_volume};
pub use phantom::{generate_phantom, write_phantom_dataset, Ellipsoid, LesionSpec, PhantomDatasetConfig, PhantomSpec};
