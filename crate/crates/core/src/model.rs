//! Domain types shared by every module: material grids, dispense paths,
//! target areas, gap tolerances, objective configuration and the product
//! definition that ties them together.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Default grid resolution along each axis.
pub const DEFAULT_GRID_SIZE: usize = 50;

/// A continuous position in grid units; cell `(i, j)` spans `[i, i+1) x [j, j+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    #[inline]
    pub fn distance(self, other: Point) -> f64 {
        (other.x - self.x).hypot(other.y - self.y)
    }

    #[inline]
    pub fn translate(self, dx: f64, dy: f64) -> Self {
        Point::new(self.x + dx, self.y + dy)
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Point { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// Material volume per cell plus everything that left the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialGrid {
    pub amounts: Grid<f64>,
    pub cell_size: f64,
    pub offgrid_sink: f64,
}

impl MaterialGrid {
    pub fn empty(width: usize, height: usize, cell_size: f64) -> Self {
        MaterialGrid {
            amounts: Grid::filled(width, height, 0.0),
            cell_size,
            offgrid_sink: 0.0,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.amounts.width()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.amounts.height()
    }

    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.cell_size * self.cell_size
    }

    pub fn on_grid_volume(&self) -> f64 {
        self.amounts.sum()
    }

    pub fn total_volume(&self) -> f64 {
        self.on_grid_volume() + self.offgrid_sink
    }

    /// Material height (volume over cell area) of the tallest cell.
    pub fn max_height(&self) -> f64 {
        let max_amount = self.amounts.as_slice().iter().copied().fold(0.0, f64::max);
        max_amount / self.cell_area()
    }

    pub fn heights(&self) -> Grid<f64> {
        let area = self.cell_area();
        self.amounts.map(|a| a / area)
    }

    pub fn occupancy(&self, threshold: f64) -> Grid<bool> {
        self.amounts.map(|&a| a > threshold)
    }
}

/// Polyline dispense path with a constant feedrate (volume per grid unit of
/// travel). `frozen` holds one flag per coordinate, interleaved `x0, y0, x1, y1, ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispensePath {
    pub points: Vec<Point>,
    pub feedrate: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frozen: Vec<bool>,
}

impl DispensePath {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid(
                "dispense path",
                format!("needs at least 2 points, got {}", points.len()),
            ));
        }
        if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::invalid("dispense path", "non-finite coordinate"));
        }
        Ok(DispensePath {
            points,
            feedrate: 0.0,
            frozen: Vec::new(),
        })
    }

    pub fn with_feedrate(mut self, feedrate: f64) -> Self {
        self.feedrate = feedrate;
        self
    }

    pub fn with_frozen(mut self, frozen: Vec<bool>) -> Result<Self> {
        if !frozen.is_empty() && frozen.len() != 2 * self.points.len() {
            return Err(Error::invalid(
                "frozen mask",
                format!(
                    "expected {} flags (two per point), got {}",
                    2 * self.points.len(),
                    frozen.len()
                ),
            ));
        }
        self.frozen = frozen;
        Ok(self)
    }

    pub fn segment_count(&self) -> usize {
        self.points.len().saturating_sub(1)
    }

    pub fn segments(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        self.points.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn length(&self) -> f64 {
        polyline_length(&self.points)
    }

    pub fn volume(&self) -> f64 {
        self.feedrate * self.length()
    }

    pub fn is_frozen(&self, coordinate: usize) -> bool {
        self.frozen.get(coordinate).copied().unwrap_or(false)
    }

    pub fn coordinates(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        DispensePath {
            points: self.points.iter().map(|p| p.translate(dx, dy)).collect(),
            ..self.clone()
        }
    }
}

pub fn polyline_length(points: &[Point]) -> f64 {
    points.windows(2).map(|w| w[0].distance(w[1])).sum()
}

/// Cooling, overflow and taboo masks, each with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetAreas {
    pub cool: Grid<f64>,
    pub over: Grid<f64>,
    pub tab: Grid<f64>,
}

impl TargetAreas {
    pub fn new(cool: Grid<f64>, over: Grid<f64>, tab: Grid<f64>) -> Result<Self> {
        let (w, h) = (cool.width(), cool.height());
        for (name, mask) in [("over", &over), ("tab", &tab)] {
            if !mask.same_shape(&cool) {
                return Err(Error::DimensionMismatch {
                    mask: name,
                    width: w,
                    height: h,
                    got_width: mask.width(),
                    got_height: mask.height(),
                });
            }
        }
        for (name, mask) in [("cool", &cool), ("over", &over), ("tab", &tab)] {
            check_mask_range(name, mask)?;
        }
        if cool.sum() <= 0.0 {
            return Err(Error::EmptyCoolingSurface);
        }
        Ok(TargetAreas { cool, over, tab })
    }

    pub fn width(&self) -> usize {
        self.cool.width()
    }

    pub fn height(&self) -> usize {
        self.cool.height()
    }

    /// Cooling-surface capacity in cells (fractional cells count fractionally).
    pub fn cool_sum(&self) -> f64 {
        self.cool.sum()
    }
}

fn check_mask_range(name: &'static str, mask: &Grid<f64>) -> Result<()> {
    for (index, &value) in mask.as_slice().iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::MaskValueOutOfRange {
                mask: name,
                index,
                x: index % mask.width(),
                y: index / mask.width(),
                value,
            });
        }
    }
    Ok(())
}

/// Nominal gap and its mechanical tolerance band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapSpec {
    pub g_final: f64,
    pub g_max: f64,
    pub g_min: f64,
    #[serde(default = "default_gap_steps")]
    pub n_steps: usize,
}

fn default_gap_steps() -> usize {
    10
}

impl GapSpec {
    pub fn nominal(g_final: f64) -> Self {
        GapSpec {
            g_final,
            g_max: g_final,
            g_min: g_final,
            n_steps: default_gap_steps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all_positive = [self.g_final, self.g_max, self.g_min]
            .iter()
            .all(|g| g.is_finite() && *g > 0.0);
        if !all_positive {
            return Err(Error::invalid("gap spec", "gap heights must be finite and > 0"));
        }
        if !(self.g_min <= self.g_final && self.g_final <= self.g_max) {
            return Err(Error::invalid(
                "gap spec",
                format!(
                    "need g_min <= g_final <= g_max, got {} / {} / {}",
                    self.g_min, self.g_final, self.g_max
                ),
            ));
        }
        if self.n_steps == 0 {
            return Err(Error::invalid("gap spec", "n_steps must be >= 1"));
        }
        Ok(())
    }
}

/// Selector for the compressed-coverage weighting inside S-con and for void areas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConWeighting {
    Con,
    Log,
}

/// Selects the coverage strategy: `Con` runs S-con, the others run S-area.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AreaWeighting {
    Con,
    Lin,
    Squ,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitWeighting {
    None,
    Lin,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    #[serde(default)]
    pub w_comp_cool: f64,
    #[serde(default = "one")]
    pub w_comp_over: f64,
    #[serde(default)]
    pub w_comp_tab: f64,
    #[serde(default)]
    pub w_init_over: f64,
    #[serde(default, rename = "w_voidBin")]
    pub w_void_bin: f64,
    #[serde(default, rename = "w_voidArea")]
    pub w_void_area: f64,
    #[serde(default = "default_f_con")]
    pub f_con: ConWeighting,
    #[serde(default = "default_f_area")]
    pub f_area: AreaWeighting,
    #[serde(default = "default_f_init")]
    pub f_init: InitWeighting,
}

fn one() -> f64 {
    1.0
}
fn default_f_con() -> ConWeighting {
    ConWeighting::Con
}
fn default_f_area() -> AreaWeighting {
    AreaWeighting::Con
}
fn default_f_init() -> InitWeighting {
    InitWeighting::None
}

impl Default for ObjectiveConfig {
    /// Best-performing row of the hyperparameter study: area-based void
    /// penalty together with a strong initial-overflow term.
    fn default() -> Self {
        ObjectiveConfig {
            w_comp_cool: 0.0,
            w_comp_over: 1.0,
            w_comp_tab: 100.0,
            w_init_over: 1000.0,
            w_void_bin: 0.0,
            w_void_area: 100.0,
            f_con: ConWeighting::Log,
            f_area: AreaWeighting::Con,
            f_init: InitWeighting::Log,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("w_comp_cool", self.w_comp_cool),
            ("w_comp_over", self.w_comp_over),
            ("w_comp_tab", self.w_comp_tab),
            ("w_init_over", self.w_init_over),
            ("w_voidBin", self.w_void_bin),
            ("w_voidArea", self.w_void_area),
        ];
        for (name, w) in weights {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::invalid(
                    "objective config",
                    format!("{name} must be finite and >= 0, got {w}"),
                ));
            }
        }
        Ok(())
    }

    /// Multiplies every weight by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        ObjectiveConfig {
            w_comp_cool: self.w_comp_cool * factor,
            w_comp_over: self.w_comp_over * factor,
            w_comp_tab: self.w_comp_tab * factor,
            w_init_over: self.w_init_over * factor,
            w_void_bin: self.w_void_bin * factor,
            w_void_area: self.w_void_area * factor,
            ..self.clone()
        }
    }
}

/// A validated product: grid geometry, target areas and gap tolerances.
#[derive(Debug, Clone, PartialEq)]
pub struct Product {
    pub name: String,
    pub cell_size: f64,
    pub areas: TargetAreas,
    pub gap: GapSpec,
}

impl Product {
    pub fn new(name: impl Into<String>, cell_size: f64, areas: TargetAreas, gap: GapSpec) -> Result<Self> {
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(Error::invalid("product", format!("cell_size must be > 0, got {cell_size}")));
        }
        gap.validate()?;
        Ok(Product {
            name: name.into(),
            cell_size,
            areas,
            gap,
        })
    }

    pub fn width(&self) -> usize {
        self.areas.width()
    }

    pub fn height(&self) -> usize {
        self.areas.height()
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_size * self.cell_size
    }

    pub fn required_volume(&self) -> f64 {
        total_required_volume(&self.areas, &self.gap, self.cell_size)
    }

    /// Area-weighted centroid of the cooling mask, in grid units.
    pub fn cooling_centroid(&self) -> Point {
        let cool = &self.areas.cool;
        let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
        for y in 0..cool.height() {
            for x in 0..cool.width() {
                let w = *cool.get(x, y);
                sx += w * (x as f64 + 0.5);
                sy += w * (y as f64 + 0.5);
                sw += w;
            }
        }
        Point::new(sx / sw, sy / sw)
    }
}

/// Volume that covers the whole cooling surface at the nominal gap.
pub fn total_required_volume(areas: &TargetAreas, gap: &GapSpec, cell_size: f64) -> f64 {
    areas.cool_sum() * cell_size * cell_size * gap.g_final
}

/// Constant feedrate that makes the path dispense exactly `required_volume`.
pub fn feedrate_for_path(points: &[Point], required_volume: f64) -> Result<f64> {
    let length = polyline_length(points);
    if !(length > 0.0) || !length.is_finite() {
        return Err(Error::ZeroLengthPath);
    }
    Ok(required_volume / length)
}
