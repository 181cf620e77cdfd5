//! Persistence, rendering, comparison and sweeps around the optimizer.

pub mod compare;
pub mod documents;
pub mod pixmap;
pub mod render;
pub mod store;
pub mod sweep;

pub use compare::{compare_paths, Comparison, PathComparison};
pub use documents::{
    load_config, load_path, load_product, parse_document, read_document, to_document, write_atomic, write_document,
    PathDocument, ProductDocument, ReportDocument, RunConfig, Versioned, SCHEMA_VERSION,
};
pub use pixmap::{areas_from_image, load_pixmap_product, Image, PixmapFormat, Rgb};
pub use render::{material_fraction, render, Scene};
pub use store::{load_trials, ranked_trials, StoreIndex, StoredTrial, TrialStore};
pub use sweep::{run_sweep, SweepConfig, SweepEntry, SweepRow};
