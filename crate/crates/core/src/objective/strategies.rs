//! Coverage and initial-overflow loss strategies.
//!
//! `distTrafo(M)` below follows the usual image-library convention: every
//! cell with `M > 0` gets its Euclidean distance to the nearest cell with
//! `M == 0`; cells outside the mask read 0. The cooling pass fixes the
//! normalisers (`max_dist_cool`, `max_mat_sum_cool`) that the overflow and
//! taboo passes reuse; they are carried explicitly instead of in globals.

use serde::{Deserialize, Serialize};

use super::weighting::WeightingFunction;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::imageops::distance_transform;

/// Binarisation threshold for "material present" on normalised coverage.
pub const COVER_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Cool,
    Over,
    Tab,
}

/// Distance of every mask cell to the nearest cell outside the mask.
pub fn mask_distance(mask: &Grid<f64>) -> Result<Grid<f64>> {
    let outside = mask.map(|&v| v <= 0.0);
    if outside.count_set() == 0 {
        // No background cell: the distance is undefined.
        return Err(Error::invalid(
            "target mask",
            "mask covers the entire grid, distance transform is undefined",
        ));
    }
    distance_transform(&outside)
}

/// Constant-weight strategy. `cool_sum` is `sum(M_target,cool)`; cooling
/// returns `f(1 - clipCover)`, other targets `f(clipCover)`. `extra_cover` adds
/// fully covered cell equivalents that lie off the grid (0 for plain use).
pub fn s_con(
    m_comp: &Grid<f64>,
    target: &Grid<f64>,
    kind: TargetKind,
    cool_sum: f64,
    f_con: WeightingFunction,
) -> Result<f64> {
    s_con_with_extra(m_comp, target, kind, cool_sum, f_con, 0.0)
}

pub(crate) fn s_con_with_extra(
    m_comp: &Grid<f64>,
    target: &Grid<f64>,
    kind: TargetKind,
    cool_sum: f64,
    f_con: WeightingFunction,
    extra_cover: f64,
) -> Result<f64> {
    if !(cool_sum > 0.0) {
        return Err(Error::EmptyCoolingSurface);
    }
    let target_cover: f64 = m_comp
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(c, t)| c * t)
        .sum::<f64>()
        + extra_cover;
    let clip_cover = (target_cover / cool_sum).min(1.0);
    Ok(match kind {
        TargetKind::Cool => f_con.apply(1.0 - clip_cover),
        TargetKind::Over | TargetKind::Tab => f_con.apply(clip_cover),
    })
}

/// Normalisers fixed by the cooling pass of the area strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaNormalizer {
    pub max_dist_cool: f64,
    pub max_mat_sum_cool: f64,
}

/// Per-cell weight field `f_area(clip(distTrafo, maxDistCool) / maxDistCool)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaWeights {
    pub kind: TargetKind,
    pub field: Grid<f64>,
}

impl AreaNormalizer {
    /// Runs the cooling half of the area strategy: returns the normaliser and
    /// the cooling weight field.
    pub fn from_cool(cool: &Grid<f64>, f_area: WeightingFunction) -> Result<(Self, AreaWeights)> {
        let dist = mask_distance(cool)?;
        let max_dist_cool = dist.max_value();
        if !(max_dist_cool > 0.0) {
            return Err(Error::EmptyMask("cooling"));
        }
        let field = dist.map(|&d| f_area.apply(d.min(max_dist_cool) / max_dist_cool));
        let max_mat_sum_cool = field.sum();
        if !(max_mat_sum_cool > 0.0) {
            return Err(Error::invalid(
                "area weighting",
                "cooling weight field sums to zero",
            ));
        }
        Ok((
            AreaNormalizer {
                max_dist_cool,
                max_mat_sum_cool,
            },
            AreaWeights {
                kind: TargetKind::Cool,
                field,
            },
        ))
    }

    /// Weight field for the overflow or taboo mask, clipped at the cooling maximum.
    pub fn weights_for(&self, target: &Grid<f64>, kind: TargetKind, f_area: WeightingFunction) -> Result<AreaWeights> {
        let dist = mask_distance(target)?;
        let field = dist.map(|&d| f_area.apply(d.min(self.max_dist_cool) / self.max_dist_cool));
        Ok(AreaWeights { kind, field })
    }
}

/// Area strategy on a prepared weight field.
pub fn s_area_weighted(m_comp: &Grid<f64>, weights: &AreaWeights, norm: &AreaNormalizer, extra_weight: f64) -> f64 {
    let covered: f64 = m_comp
        .as_slice()
        .iter()
        .zip(weights.field.as_slice())
        .filter(|(c, _)| **c > COVER_THRESHOLD)
        .map(|(_, w)| *w)
        .sum::<f64>()
        + extra_weight;
    (covered / norm.max_mat_sum_cool).clamp(0.0, 1.0)
}

/// Area strategy from scratch. The cooling mask is processed first to fix the
/// normalisers, then `target` is evaluated against them.
pub fn s_area(
    m_comp: &Grid<f64>,
    target: &Grid<f64>,
    kind: TargetKind,
    cool: &Grid<f64>,
    f_area: WeightingFunction,
) -> Result<f64> {
    let (norm, cool_weights) = AreaNormalizer::from_cool(cool, f_area)?;
    let weights = match kind {
        TargetKind::Cool => cool_weights,
        _ => {
            if target.sum() <= 0.0 {
                return Err(Error::EmptyMask(match kind {
                    TargetKind::Over => "overflow",
                    _ => "taboo",
                }));
            }
            norm.weights_for(target, kind, f_area)?
        }
    };
    Ok(s_area_weighted(m_comp, &weights, &norm, 0.0))
}

/// Weight field of the initial-overflow strategy: distance into the overflow
/// mask, clipped at half the grid size, normalised and weighted.
#[derive(Debug, Clone, PartialEq)]
pub struct InitWeights {
    pub field: Grid<f64>,
    pub max_mat_sum: f64,
    pub max_dist: f64,
    pub f_init: WeightingFunction,
}

impl InitWeights {
    pub fn new(over: &Grid<f64>, f_init: WeightingFunction) -> Result<Self> {
        if over.sum() <= 0.0 {
            return Err(Error::EmptyMask("overflow"));
        }
        let dist = mask_distance(over)?;
        let max_dist = 0.5 * over.width().min(over.height()) as f64;
        let field = dist.map(|&d| f_init.apply(d.min(max_dist) / max_dist));
        let max_mat_sum = field.sum();
        if !(max_mat_sum > 0.0) {
            return Err(Error::invalid(
                "initial-overflow weighting",
                "weight field sums to zero",
            ));
        }
        Ok(InitWeights {
            field,
            max_mat_sum,
            max_dist,
            f_init,
        })
    }

    /// `offgrid_cells` counts dispensed cell equivalents beyond the grid; they
    /// carry the maximum weight.
    pub fn loss(&self, initial_cover: &Grid<bool>, offgrid_cells: f64) -> f64 {
        let covered: f64 = initial_cover
            .as_slice()
            .iter()
            .zip(self.field.as_slice())
            .filter(|(c, _)| **c)
            .map(|(_, w)| *w)
            .sum::<f64>()
            + offgrid_cells * self.f_init.max_on_unit();
        (covered / self.max_mat_sum).clamp(0.0, 1.0)
    }
}

/// Initial-overflow strategy on the dispensed amounts.
pub fn s_init(m_initial: &Grid<f64>, over: &Grid<f64>, f_init: WeightingFunction) -> Result<f64> {
    let weights = InitWeights::new(over, f_init)?;
    Ok(weights.loss(&m_initial.map(|&a| a > COVER_THRESHOLD), 0.0))
}
