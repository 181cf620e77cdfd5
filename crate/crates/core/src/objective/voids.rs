use serde::{Deserialize, Serialize};

use super::strategies::COVER_THRESHOLD;
use super::weighting::WeightingFunction;
use crate::flow::FlowSnapshot;
use crate::imageops::{enclosed_voids, enclosed_voids_spans, VoidStats};
use crate::raster::FineMask;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct VoidLosses {
    pub bin_init: f64,
    pub area_init: f64,
    pub bin_med: f64,
    pub area_med: f64,
    /// Voids of the dispensed footprint, areas in fine pixels.
    pub initial: VoidStats,
    /// Voids at the first snapshot that has any, areas in coarse cells.
    pub intermediate: VoidStats,
    /// Gap height of that snapshot.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intermediate_gap: Option<f64>,
}

/// Initial voids come from the fine footprint; intermediate voids from the
/// coarse snapshots, scored at the first snapshot where any void exists.
/// Areas are normalised by the cooling capacity, clipped to 1 and weighted
/// with `f_con`.
pub fn void_losses(fine: &FineMask, snapshots: &[FlowSnapshot], cool_sum: f64, f_con: WeightingFunction) -> VoidLosses {
    let mut out = VoidLosses::default();
    let scale2 = (fine.scale() * fine.scale()) as f64;
    let area_term = |cells: f64| f_con.apply((cells / cool_sum).min(1.0));

    out.initial = enclosed_voids_spans(fine);
    if out.initial.any() {
        out.bin_init = 1.0;
        out.area_init = area_term(out.initial.area as f64 / scale2);
    }

    for snap in snapshots {
        let threshold = COVER_THRESHOLD * snap.gap * snap.state.cell_area();
        let stats = enclosed_voids(&snap.state.occupancy(threshold));
        if stats.any() {
            out.intermediate = stats;
            out.intermediate_gap = Some(snap.gap);
            out.bin_med = 1.0;
            out.area_med = area_term(stats.area as f64);
            break;
        }
    }
    out
}
