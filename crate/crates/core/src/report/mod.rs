//! Pipeline configuration, results tables and overlay figures.

mod config;
mod overlay;
mod table;

pub use config::{apply_override, EvaluationConfig, PipelineConfig, PipelinePaths, CACHE_DIR_ENV};
pub use overlay::{render_overlay, select_slice, OverlapMode, OverlaySpec, Rgb, RgbImage, SliceSelection};
pub use table::{render_markdown, results_table, sean_reference, ExternalReference, ResultsTable, TableRow};
