use serde::{Deserialize, Serialize};

use super::label::{connected_components, Connectivity, UnionFind};
use crate::grid::{BinaryGrid, Grid};
use crate::raster::FineMask;

/// Enclosed empty regions of an occupancy mask.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoidStats {
    pub count: usize,
    /// Summed area of all voids, in cells of the analysed grid.
    pub area: usize,
}

impl VoidStats {
    pub fn any(&self) -> bool {
        self.count > 0
    }
}

/// Counts the 4-connected components of the complement that cannot reach the
/// border. The grid is padded with one empty cell on every side first, so
/// material touching the edge never closes off a region by itself.
pub fn enclosed_voids(occupancy: &BinaryGrid) -> VoidStats {
    let (w, h) = (occupancy.width(), occupancy.height());
    let padded = Grid::from_fn(w + 2, h + 2, |x, y| {
        if x == 0 || y == 0 || x == w + 1 || y == h + 1 {
            true
        } else {
            !*occupancy.get(x - 1, y - 1)
        }
    });
    let cc = connected_components(&padded, Connectivity::Four);
    let outside = *cc.label_map.get(0, 0) as usize;
    let mut stats = VoidStats::default();
    for (label, &area) in cc.component_areas.iter().enumerate().skip(1) {
        if label != outside {
            stats.count += 1;
            stats.area += area;
        }
    }
    stats
}

/// Same result as [`enclosed_voids`] on `mask.to_grid()`, computed on the
/// run-length form: empty runs of neighbouring rows are joined when their
/// column ranges overlap.
pub fn enclosed_voids_spans(mask: &FineMask) -> VoidStats {
    let w = mask.width() as i64;
    let h = mask.height();
    let mut uf = UnionFind::new();
    // (start, end, id) of empty runs in padded coordinates, columns -1..=w.
    let mut prev: Vec<(i64, i64, u32)> = vec![(-1, w + 1, uf.make_set())];
    let outside = prev[0].2;
    let mut cur: Vec<(i64, i64, u32)> = Vec::new();
    let mut lengths: Vec<i64> = vec![0];

    let link_rows = |prev: &[(i64, i64, u32)], cur: &[(i64, i64, u32)], uf: &mut UnionFind| {
        let (mut i, mut j) = (0, 0);
        while i < prev.len() && j < cur.len() {
            let (a0, a1, ai) = prev[i];
            let (b0, b1, bi) = cur[j];
            if a0 < b1 && b0 < a1 {
                uf.union(ai, bi);
            }
            if a1 < b1 {
                i += 1;
            } else {
                j += 1;
            }
        }
    };

    for y in 0..=h {
        cur.clear();
        if y == h {
            cur.push((-1, w + 1, uf.make_set()));
            lengths.push(0);
        } else {
            let mut start = -1i64;
            for &(a, b) in mask.row(y) {
                let (a, b) = (a as i64, b as i64);
                if a > start {
                    let id = uf.make_set();
                    // Padding columns are not part of the image.
                    lengths.push(a - start.max(0));
                    cur.push((start, a, id));
                }
                start = b;
            }
            let id = uf.make_set();
            lengths.push(w - start.max(0));
            cur.push((start, w + 1, id));
        }
        link_rows(&prev, &cur, &mut uf);
        std::mem::swap(&mut prev, &mut cur);
    }

    let outside_root = uf.find(outside);
    let mut areas = std::collections::BTreeMap::new();
    for id in 0..uf.len() as u32 {
        let root = uf.find(id);
        if root != outside_root {
            *areas.entry(root).or_insert(0i64) += lengths[id as usize];
        }
    }
    VoidStats {
        count: areas.len(),
        area: areas.values().sum::<i64>() as usize,
    }
}
