//! Turns a dispense path into its dispensed material state.
//!
//! The bead is modelled as a top-hat strip of `bead_width` centred on each
//! segment. The coarse raster deposits volume in proportion to the exact
//! area of the strip inside each cell (polygon clipping, no sampling), so
//! `sum(amounts) + offgrid_sink == feedrate * length` up to rounding. The fine
//! raster is a binary footprint stored as row spans; interior vertices get
//! round joins so a bent path stays one connected bead.

use serde::{Deserialize, Serialize};

use crate::grid::{BinaryGrid, Grid};
use crate::model::{DispensePath, MaterialGrid, Point};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RasterSettings {
    #[serde(default = "default_fine_scale")]
    pub fine_scale: usize,
    #[serde(default = "default_bead_width")]
    pub bead_width: f64,
}

fn default_fine_scale() -> usize {
    20
}

fn default_bead_width() -> f64 {
    1.0
}

impl Default for RasterSettings {
    fn default() -> Self {
        RasterSettings {
            fine_scale: default_fine_scale(),
            bead_width: default_bead_width(),
        }
    }
}

/// Tolerance used when deciding whether a fine pixel centre lies on the bead boundary.
const BOUNDARY_EPS: f64 = 1e-9;

/// Corners of the strip swept by a segment, counter-clockwise. `None` for
/// zero-length segments.
fn segment_strip(a: Point, b: Point, half_width: f64) -> Option<[Point; 4]> {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len = dx.hypot(dy);
    if len <= 0.0 {
        return None;
    }
    let (nx, ny) = (-dy / len * half_width, dx / len * half_width);
    Some([
        Point::new(a.x - nx, a.y - ny),
        Point::new(b.x - nx, b.y - ny),
        Point::new(b.x + nx, b.y + ny),
        Point::new(a.x + nx, a.y + ny),
    ])
}

#[derive(Clone, Copy)]
enum Side {
    XAtLeast(f64),
    XAtMost(f64),
    YAtLeast(f64),
    YAtMost(f64),
}

impl Side {
    #[inline]
    fn inside(self, p: Point) -> bool {
        match self {
            Side::XAtLeast(v) => p.x >= v,
            Side::XAtMost(v) => p.x <= v,
            Side::YAtLeast(v) => p.y >= v,
            Side::YAtMost(v) => p.y <= v,
        }
    }

    #[inline]
    fn intersect(self, p: Point, q: Point) -> Point {
        match self {
            Side::XAtLeast(v) | Side::XAtMost(v) => {
                let t = (v - p.x) / (q.x - p.x);
                Point::new(v, p.y + t * (q.y - p.y))
            }
            Side::YAtLeast(v) | Side::YAtMost(v) => {
                let t = (v - p.y) / (q.y - p.y);
                Point::new(p.x + t * (q.x - p.x), v)
            }
        }
    }
}

/// One Sutherland-Hodgman pass against an axis-aligned half-plane.
fn clip(poly: &[Point], side: Side, out: &mut Vec<Point>) {
    out.clear();
    let Some(&last) = poly.last() else { return };
    let mut prev = last;
    for &cur in poly {
        match (side.inside(prev), side.inside(cur)) {
            (true, true) => out.push(cur),
            (true, false) => out.push(side.intersect(prev, cur)),
            (false, true) => {
                out.push(side.intersect(prev, cur));
                out.push(cur);
            }
            (false, false) => {}
        }
        prev = cur;
    }
}

fn polygon_area(poly: &[Point]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    let mut prev = poly[poly.len() - 1];
    for &cur in poly {
        acc += prev.x * cur.y - cur.x * prev.y;
        prev = cur;
    }
    0.5 * acc.abs()
}

fn bounds(poly: &[Point]) -> (f64, f64, f64, f64) {
    poly.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(x0, x1, y0, y1), p| (x0.min(p.x), x1.max(p.x), y0.min(p.y), y1.max(p.y)),
    )
}

/// Deposits `density * area(poly ∩ cell)` into every on-grid cell and
/// returns the total deposited.
fn deposit_polygon(poly: &[Point], density: f64, amounts: &mut Grid<f64>) -> f64 {
    let (w, h) = (amounts.width() as i64, amounts.height() as i64);
    let (_, _, y0, y1) = bounds(poly);
    let row_lo = (y0.floor() as i64).max(0);
    let row_hi = (y1.ceil() as i64).min(h);
    let mut deposited = 0.0;
    let (mut tmp, mut band, mut cell_a, mut cell_b) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for row in row_lo..row_hi {
        clip(poly, Side::YAtLeast(row as f64), &mut tmp);
        clip(&tmp, Side::YAtMost(row as f64 + 1.0), &mut band);
        if band.len() < 3 {
            continue;
        }
        let (x0, x1, _, _) = bounds(&band);
        let col_lo = (x0.floor() as i64).max(0);
        let col_hi = (x1.ceil() as i64).min(w);
        for col in col_lo..col_hi {
            clip(&band, Side::XAtLeast(col as f64), &mut cell_a);
            clip(&cell_a, Side::XAtMost(col as f64 + 1.0), &mut cell_b);
            let area = polygon_area(&cell_b);
            if area > 0.0 {
                let amount = density * area;
                *amounts.get_mut(col as usize, row as usize) += amount;
                deposited += amount;
            }
        }
    }
    deposited
}

/// Dispensed material state on the evaluation grid.
///
/// Each segment spreads `feedrate * length` uniformly over its strip; the
/// part of the strip outside the grid goes to `offgrid_sink`. Repeated
/// passes over a cell add up.
pub fn rasterize_coarse(
    path: &DispensePath,
    width: usize,
    height: usize,
    cell_size: f64,
    settings: &RasterSettings,
) -> MaterialGrid {
    let mut grid = MaterialGrid::empty(width, height, cell_size);
    if path.feedrate == 0.0 {
        return grid;
    }
    let half = 0.5 * settings.bead_width;
    let density = path.feedrate / settings.bead_width;
    for (a, b) in path.segments() {
        let Some(strip) = segment_strip(a, b, half) else {
            continue;
        };
        let volume = path.feedrate * a.distance(b);
        let deposited = deposit_polygon(&strip, density, &mut grid.amounts);
        // Strips fully on the grid leave only rounding residue; keep the sink clean.
        let (x0, x1, y0, y1) = bounds(&strip);
        if x0 < 0.0 || y0 < 0.0 || x1 > width as f64 || y1 > height as f64 {
            grid.offgrid_sink += (volume - deposited).max(0.0);
        }
    }
    grid
}

/// Binary bead footprint at `fine_scale` times the coarse resolution,
/// stored as sorted, disjoint, half-open column spans per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FineMask {
    width: usize,
    height: usize,
    scale: usize,
    rows: Vec<Vec<(u32, u32)>>,
}

impl FineMask {
    /// Run-length form of an arbitrary binary grid (scale 1).
    pub fn from_grid(grid: &BinaryGrid) -> Self {
        let rows = grid
            .rows()
            .map(|row| {
                let mut spans = Vec::new();
                let mut x = 0;
                while x < row.len() {
                    if row[x] {
                        let start = x;
                        while x < row.len() && row[x] {
                            x += 1;
                        }
                        spans.push((start as u32, x as u32));
                    } else {
                        x += 1;
                    }
                }
                spans
            })
            .collect();
        FineMask {
            width: grid.width(),
            height: grid.height(),
            scale: 1,
            rows,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn row(&self, y: usize) -> &[(u32, u32)] {
        &self.rows[y]
    }

    pub fn rows(&self) -> &[Vec<(u32, u32)>] {
        &self.rows
    }

    pub fn count_set(&self) -> usize {
        self.rows
            .iter()
            .flat_map(|r| r.iter())
            .map(|&(a, b)| (b - a) as usize)
            .sum()
    }

    pub fn is_set(&self, x: usize, y: usize) -> bool {
        self.rows[y].iter().any(|&(a, b)| (a as usize) <= x && x < b as usize)
    }

    pub fn to_grid(&self) -> BinaryGrid {
        let mut grid = Grid::filled(self.width, self.height, false);
        for (y, spans) in self.rows.iter().enumerate() {
            for &(a, b) in spans {
                for x in a..b {
                    *grid.get_mut(x as usize, y) = true;
                }
            }
        }
        grid
    }
}

enum Piece {
    Strip([Point; 4]),
    Disk(Point, f64),
}

impl Piece {
    /// Closed interval of x where the horizontal line at `y` meets the piece.
    fn row_interval(&self, y: f64) -> Option<(f64, f64)> {
        match self {
            Piece::Disk(c, r) => {
                let dy = y - c.y;
                let rem = r * r - dy * dy;
                (rem >= 0.0).then(|| {
                    let half = rem.sqrt();
                    (c.x - half, c.x + half)
                })
            }
            Piece::Strip(poly) => {
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for i in 0..4 {
                    let p = poly[i];
                    let q = poly[(i + 1) % 4];
                    let (ymin, ymax) = if p.y <= q.y { (p.y, q.y) } else { (q.y, p.y) };
                    if y < ymin - BOUNDARY_EPS || y > ymax + BOUNDARY_EPS {
                        continue;
                    }
                    if (q.y - p.y).abs() <= BOUNDARY_EPS {
                        lo = lo.min(p.x.min(q.x));
                        hi = hi.max(p.x.max(q.x));
                    } else {
                        let t = ((y - p.y) / (q.y - p.y)).clamp(0.0, 1.0);
                        let x = p.x + t * (q.x - p.x);
                        lo = lo.min(x);
                        hi = hi.max(x);
                    }
                }
                (lo <= hi).then_some((lo, hi))
            }
        }
    }

    fn y_range(&self) -> (f64, f64) {
        match self {
            Piece::Disk(c, r) => (c.y - r, c.y + r),
            Piece::Strip(poly) => {
                let (_, _, y0, y1) = bounds(poly);
                (y0, y1)
            }
        }
    }
}

/// Binary footprint of the bead at fine resolution: a pixel is set when its
/// centre lies inside a segment strip (flat ends) or inside the round join
/// disk at an interior vertex.
pub fn rasterize_fine(path: &DispensePath, width: usize, height: usize, settings: &RasterSettings) -> FineMask {
    let scale = settings.fine_scale.max(1);
    let (fw, fh) = (width * scale, height * scale);
    let half = 0.5 * settings.bead_width;
    let mut pieces = Vec::new();
    for (a, b) in path.segments() {
        if let Some(strip) = segment_strip(a, b, half) {
            pieces.push(Piece::Strip(strip));
        }
    }
    let n = path.points.len();
    if n > 2 {
        for p in &path.points[1..n - 1] {
            pieces.push(Piece::Disk(*p, half));
        }
    }

    let s = scale as f64;
    let mut rows: Vec<Vec<(u32, u32)>> = vec![Vec::new(); fh];
    let mut intervals: Vec<(i64, i64)> = Vec::new();
    for piece in &pieces {
        let (y0, y1) = piece.y_range();
        let r_lo = ((y0 * s - 0.5 - BOUNDARY_EPS).ceil() as i64).max(0);
        let r_hi = ((y1 * s - 0.5 + BOUNDARY_EPS).floor() as i64).min(fh as i64 - 1);
        for r in r_lo..=r_hi {
            let yc = (r as f64 + 0.5) / s;
            if let Some((xa, xb)) = piece.row_interval(yc) {
                let c_lo = ((xa * s - 0.5 - BOUNDARY_EPS).ceil() as i64).max(0);
                let c_hi = ((xb * s - 0.5 + BOUNDARY_EPS).floor() as i64).min(fw as i64 - 1);
                if c_lo <= c_hi {
                    rows[r as usize].push((c_lo as u32, c_hi as u32 + 1));
                }
            }
        }
    }
    for spans in &mut rows {
        if spans.len() > 1 {
            intervals.clear();
            intervals.extend(spans.iter().map(|&(a, b)| (a as i64, b as i64)));
            intervals.sort_unstable();
            spans.clear();
            let mut cur = intervals[0];
            for &(a, b) in &intervals[1..] {
                if a <= cur.1 {
                    cur.1 = cur.1.max(b);
                } else {
                    spans.push((cur.0 as u32, cur.1 as u32));
                    cur = (a, b);
                }
            }
            spans.push((cur.0 as u32, cur.1 as u32));
        }
    }
    FineMask {
        width: fw,
        height: fh,
        scale,
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(points: &[(f64, f64)], feedrate: f64) -> DispensePath {
        DispensePath::new(points.iter().map(|&(x, y)| Point::new(x, y)).collect())
            .unwrap()
            .with_feedrate(feedrate)
    }

    #[test]
    fn horizontal_segment_fills_one_row() {
        let p = path(&[(0.0, 2.5), (10.0, 2.5)], 1.0);
        let g = rasterize_coarse(&p, 12, 6, 1.0, &RasterSettings::default());
        for x in 0..12 {
            for y in 0..6 {
                let expected = if y == 2 && x < 10 { 1.0 } else { 0.0 };
                assert!((g.amounts.get(x, y) - expected).abs() < 1e-12, "cell ({x},{y})");
            }
        }
        assert_eq!(g.offgrid_sink, 0.0);
    }

    #[test]
    fn zero_feedrate_leaves_grid_empty() {
        let p = path(&[(1.0, 1.0), (8.0, 6.0)], 0.0);
        let g = rasterize_coarse(&p, 10, 10, 1.0, &RasterSettings::default());
        assert!(g.amounts.as_slice().iter().all(|&a| a == 0.0));
        assert_eq!(g.offgrid_sink, 0.0);
    }

    #[test]
    fn diagonal_conserves_volume_and_tracks_centerline() {
        // Corner-to-corner diagonal of a 2x2 grid: total volume 2*sqrt(2).
        let p = path(&[(0.0, 0.0), (2.0, 2.0)], 1.0);
        let g = rasterize_coarse(&p, 2, 2, 1.0, &RasterSettings::default());
        let total = 2.0 * 2f64.sqrt();
        assert!((g.total_volume() - total).abs() < 1e-12);
        // The strip pokes off-grid near both corners.
        assert!(g.offgrid_sink > 0.0);
        // A hairline bead concentrates the length-in-cell on the crossed cells.
        let thin = RasterSettings {
            bead_width: 1e-7,
            ..Default::default()
        };
        let g = rasterize_coarse(&p, 2, 2, 1.0, &thin);
        for (x, y, expected) in [(0, 0, 2f64.sqrt()), (1, 1, 2f64.sqrt()), (0, 1, 0.0), (1, 0, 0.0)] {
            assert!((g.amounts.get(x, y) - expected).abs() < 1e-6, "cell ({x},{y})");
        }
    }

    #[test]
    fn strip_outside_grid_goes_to_sink() {
        let p = path(&[(-5.0, -5.0), (-1.0, -5.0)], 2.0);
        let g = rasterize_coarse(&p, 4, 4, 1.0, &RasterSettings::default());
        assert_eq!(g.on_grid_volume(), 0.0);
        assert!((g.offgrid_sink - 8.0).abs() < 1e-12);
    }

    #[test]
    fn fine_straight_segment_is_a_rectangle() {
        let settings = RasterSettings {
            fine_scale: 20,
            bead_width: 1.0,
        };
        let p = path(&[(2.0, 5.0), (8.0, 5.0)], 1.0);
        let m = rasterize_fine(&p, 10, 10, &settings);
        let grid = m.to_grid();
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for y in 0..grid.height() {
            for x in 0..grid.width() {
                if *grid.get(x, y) {
                    xs.push(x);
                    ys.push(y);
                }
            }
        }
        let (x0, x1) = (*xs.iter().min().unwrap(), *xs.iter().max().unwrap());
        let (y0, y1) = (*ys.iter().min().unwrap(), *ys.iter().max().unwrap());
        assert_eq!((x0, x1), (40, 159));
        assert_eq!((y0, y1), (90, 109));
        assert_eq!(y1 - y0 + 1, 20);
        assert_eq!(m.count_set(), (x1 - x0 + 1) * (y1 - y0 + 1));
    }

    #[test]
    fn fine_spans_are_sorted_and_disjoint() {
        let p = path(&[(1.0, 1.0), (9.0, 9.0), (1.0, 9.0), (9.0, 1.0)], 1.0);
        let m = rasterize_fine(&p, 10, 10, &RasterSettings::default());
        for spans in m.rows() {
            for w in spans.windows(2) {
                assert!(w[0].1 < w[1].0);
            }
            for &(a, b) in spans {
                assert!(a < b && b as usize <= m.width());
            }
        }
        assert_eq!(m.count_set(), m.to_grid().count_set());
    }
}
