//! Grid image primitives: exact Euclidean distance transform, connected
//! component labeling and enclosed-void detection.

mod distance;
mod label;
mod voids;

pub use distance::distance_transform;
pub use label::{connected_components, Connectivity, LabeledComponents, UnionFind};
pub use voids::{enclosed_voids, enclosed_voids_spans, VoidStats};
