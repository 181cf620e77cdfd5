//! Scalar objective for a dispense path.
//!
//! ```text
//! L = w_comp,cool * L_comp,cool + w_comp,over * L_comp,over + w_comp,tab * L_comp,tab
//!   + w_init,over * L_init,over
//!   + w_voidBin  * (L_voidBin,init  + L_voidBin,med)
//!   + w_voidArea * (L_voidArea,init + L_voidArea,med)
//! ```
//!
//! [`Evaluator`] caches everything that depends only on the product and the
//! configuration (distance-transform weight fields, normalisers) so the
//! optimizer pays only for rasterisation, flow and the per-path sums.

mod strategies;
mod voids;
mod weighting;

use serde::{Deserialize, Serialize};

pub use strategies::{
    mask_distance, s_area, s_area_weighted, s_con, s_init, AreaNormalizer, AreaWeights, InitWeights, TargetKind,
    COVER_THRESHOLD,
};
pub use voids::{void_losses, VoidLosses};
pub use weighting::{WeightingFunction, LOG_EPS};

use crate::error::Result;
use crate::flow::{compress, compress_two_stage, normalize_compressed, FlowSettings, FlowSnapshot};
use crate::grid::Grid;
use crate::model::{AreaWeighting, DispensePath, GapSpec, InitWeighting, MaterialGrid, ObjectiveConfig, Product};
use crate::raster::{rasterize_coarse, rasterize_fine, RasterSettings};

/// Unweighted loss terms. Serialized with their conventional symbol names.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    #[serde(rename = "L_comp_cool")]
    pub comp_cool: f64,
    #[serde(rename = "L_comp_over")]
    pub comp_over: f64,
    #[serde(rename = "L_comp_tab")]
    pub comp_tab: f64,
    #[serde(rename = "L_init_over")]
    pub init_over: f64,
    #[serde(rename = "L_voidBin_init")]
    pub void_bin_init: f64,
    #[serde(rename = "L_voidBin_med")]
    pub void_bin_med: f64,
    #[serde(rename = "L_voidArea_init")]
    pub void_area_init: f64,
    #[serde(rename = "L_voidArea_med")]
    pub void_area_med: f64,
}

impl LossTerms {
    /// Weighted recombination of the terms.
    pub fn weighted_total(&self, cfg: &ObjectiveConfig) -> f64 {
        cfg.w_comp_cool * self.comp_cool
            + cfg.w_comp_over * self.comp_over
            + cfg.w_comp_tab * self.comp_tab
            + cfg.w_init_over * self.init_over
            + cfg.w_void_bin * self.void_bin_init
            + cfg.w_void_bin * self.void_bin_med
            + cfg.w_void_area * self.void_area_init
            + cfg.w_void_area * self.void_area_med
    }

    pub fn as_array(&self) -> [f64; 8] {
        [
            self.comp_cool,
            self.comp_over,
            self.comp_tab,
            self.init_over,
            self.void_bin_init,
            self.void_bin_med,
            self.void_area_init,
            self.void_area_med,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageStrategy {
    SCon,
    SArea,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageTerms {
    pub cool: f64,
    pub over: f64,
    pub tab: f64,
}

/// Coverage statistics and terms at one gap height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub gap: f64,
    pub terms: CoverageTerms,
    pub coverage_fraction: f64,
    pub overflow_ratio: f64,
    pub taboo_violation_fraction: f64,
}

/// Intermediate states kept for rendering and inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationTrace {
    pub initial: MaterialGrid,
    pub snapshots: Vec<FlowSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub total_loss: f64,
    pub terms: LossTerms,
    pub coverage_strategy: CoverageStrategy,
    /// Covered fraction of the cooling capacity (at `g_max` in tolerance mode).
    pub coverage_fraction: f64,
    /// Volume outside the cooling surface divided by the volume on it.
    pub overflow_ratio: f64,
    /// Taboo coverage relative to the cooling capacity (at `g_min` in tolerance mode).
    pub taboo_violation_fraction: f64,
    /// Initial plus first-detected intermediate void area, relative to the cooling capacity.
    pub void_area_fraction: f64,
    pub voids: VoidLosses,
    pub dispensed_volume: f64,
    pub tolerance_mode: bool,
    pub gaps: Vec<GapReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<EvaluationTrace>,
}

impl EvaluationReport {
    pub fn has_voids(&self) -> bool {
        self.voids.initial.count > 0 || self.voids.intermediate.count > 0
    }
}

/// Rasterisation, flow and mode settings for an evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    #[serde(default)]
    pub raster: RasterSettings,
    #[serde(default)]
    pub flow: FlowSettings,
    #[serde(default)]
    pub tolerance_mode: bool,
}

enum CoveragePrep {
    Con,
    Area {
        norm: AreaNormalizer,
        cool: AreaWeights,
        over: Option<AreaWeights>,
        tab: Option<AreaWeights>,
        f_area: WeightingFunction,
    },
}

/// Product- and configuration-specific precomputation for repeated evaluations.
pub struct Evaluator {
    product: Product,
    config: ObjectiveConfig,
    settings: EvalSettings,
    cool_sum: f64,
    coverage: CoveragePrep,
    init: Option<InitWeights>,
}

impl Evaluator {
    pub fn new(product: &Product, config: &ObjectiveConfig, settings: EvalSettings) -> Result<Self> {
        config.validate()?;
        product.gap.validate()?;
        let areas = &product.areas;
        let coverage = match config.f_area {
            AreaWeighting::Con => CoveragePrep::Con,
            f => {
                let f_area = WeightingFunction::from(f);
                let (norm, cool) = AreaNormalizer::from_cool(&areas.cool, f_area)?;
                let over = (areas.over.sum() > 0.0)
                    .then(|| norm.weights_for(&areas.over, TargetKind::Over, f_area))
                    .transpose()?;
                let tab = (areas.tab.sum() > 0.0)
                    .then(|| norm.weights_for(&areas.tab, TargetKind::Tab, f_area))
                    .transpose()?;
                CoveragePrep::Area {
                    norm,
                    cool,
                    over,
                    tab,
                    f_area,
                }
            }
        };
        let init = match config.f_init {
            InitWeighting::None => None,
            f => Some(InitWeights::new(&areas.over, f.into())?),
        };
        Ok(Evaluator {
            product: product.clone(),
            config: config.clone(),
            settings,
            cool_sum: areas.cool_sum(),
            coverage,
            init,
        })
    }

    pub fn product(&self) -> &Product {
        &self.product
    }

    pub fn config(&self) -> &ObjectiveConfig {
        &self.config
    }

    pub fn settings(&self) -> &EvalSettings {
        &self.settings
    }

    pub fn coverage_strategy(&self) -> CoverageStrategy {
        match self.coverage {
            CoveragePrep::Con => CoverageStrategy::SCon,
            CoveragePrep::Area { .. } => CoverageStrategy::SArea,
        }
    }

    /// Coverage terms of one compressed state. Material that left the grid
    /// counts as fully covered overflow at maximum distance.
    pub fn coverage_terms(&self, state: &MaterialGrid, gap: f64) -> Result<CoverageTerms> {
        let m_comp = normalize_compressed(state, gap);
        let sink_cells = state.offgrid_sink / (gap * state.cell_area());
        let areas = &self.product.areas;
        let f_con = WeightingFunction::from(self.config.f_con);
        Ok(match &self.coverage {
            CoveragePrep::Con => CoverageTerms {
                cool: strategies::s_con_with_extra(&m_comp, &areas.cool, TargetKind::Cool, self.cool_sum, f_con, 0.0)?,
                over: strategies::s_con_with_extra(
                    &m_comp,
                    &areas.over,
                    TargetKind::Over,
                    self.cool_sum,
                    f_con,
                    sink_cells,
                )?,
                tab: strategies::s_con_with_extra(&m_comp, &areas.tab, TargetKind::Tab, self.cool_sum, f_con, 0.0)?,
            },
            CoveragePrep::Area {
                norm,
                cool,
                over,
                tab,
                f_area,
            } => CoverageTerms {
                cool: s_area_weighted(&m_comp, cool, norm, 0.0),
                over: over.as_ref().map_or(0.0, |w| {
                    s_area_weighted(&m_comp, w, norm, sink_cells * f_area.max_on_unit())
                }),
                tab: tab.as_ref().map_or(0.0, |w| s_area_weighted(&m_comp, w, norm, 0.0)),
            },
        })
    }

    fn gap_report(&self, state: &MaterialGrid, gap: f64) -> Result<GapReport> {
        let terms = self.coverage_terms(state, gap)?;
        let areas = &self.product.areas;
        let m_comp = normalize_compressed(state, gap);
        let dot = |mask: &Grid<f64>| -> f64 { m_comp.as_slice().iter().zip(mask.as_slice()).map(|(a, b)| a * b).sum() };
        let in_cool: f64 = state
            .amounts
            .as_slice()
            .iter()
            .zip(areas.cool.as_slice())
            .map(|(a, c)| a * c)
            .sum();
        let total = state.total_volume();
        let overflow_ratio = if in_cool > 0.0 {
            (total - in_cool).max(0.0) / in_cool
        } else if total > 0.0 {
            f64::MAX
        } else {
            0.0
        };
        Ok(GapReport {
            gap,
            terms,
            coverage_fraction: dot(&areas.cool) / self.cool_sum,
            overflow_ratio,
            taboo_violation_fraction: dot(&areas.tab) / self.cool_sum,
        })
    }

    /// Coverage, overflow and taboo figures at `g_final` only, skipping the
    /// void analysis. Used by calibration.
    pub fn final_gap_report(&self, path: &DispensePath) -> Result<GapReport> {
        let product = &self.product;
        let initial = rasterize_coarse(path, product.width(), product.height(), product.cell_size, &self.settings.raster);
        let trace = compress(&initial, &product.gap, product.gap.g_final, &self.settings.flow)?;
        self.gap_report(trace.final_state(), product.gap.g_final)
    }

    pub fn evaluate(&self, path: &DispensePath) -> Result<EvaluationReport> {
        self.run(path, false)
    }

    /// Like [`Evaluator::evaluate`] but keeps the dispensed state and every flow snapshot.
    pub fn evaluate_with_trace(&self, path: &DispensePath) -> Result<EvaluationReport> {
        self.run(path, true)
    }

    fn run(&self, path: &DispensePath, keep_trace: bool) -> Result<EvaluationReport> {
        let product = &self.product;
        let (w, h) = (product.width(), product.height());
        let raster = &self.settings.raster;
        let gap = &product.gap;
        let initial = rasterize_coarse(path, w, h, product.cell_size, raster);

        let (snapshots, gaps) = if self.settings.tolerance_mode {
            let (tmax, tmin) = compress_two_stage(&initial, gap, &self.settings.flow)?;
            let gaps = vec![
                self.gap_report(tmax.final_state(), gap.g_max)?,
                self.gap_report(tmin.final_state(), gap.g_min)?,
            ];
            let mut snaps = tmax.snapshots;
            snaps.extend(tmin.snapshots);
            (snaps, gaps)
        } else {
            let trace = compress(&initial, gap, gap.g_final, &self.settings.flow)?;
            let gaps = vec![self.gap_report(trace.final_state(), gap.g_final)?];
            (trace.snapshots, gaps)
        };

        let mut terms = LossTerms::default();
        for g in &gaps {
            terms.comp_cool += g.terms.cool;
            terms.comp_over += g.terms.over;
            terms.comp_tab += g.terms.tab;
        }

        if let Some(init) = &self.init {
            let cover = initial.amounts.map(|&a| a > COVER_THRESHOLD * initial.cell_area());
            let offgrid_cells = if path.feedrate > 0.0 {
                initial.offgrid_sink * raster.bead_width / path.feedrate
            } else {
                0.0
            };
            terms.init_over = init.loss(&cover, offgrid_cells);
        }

        let fine = rasterize_fine(path, w, h, raster);
        let voids = void_losses(&fine, &snapshots, self.cool_sum, self.config.f_con.into());
        terms.void_bin_init = voids.bin_init;
        terms.void_bin_med = voids.bin_med;
        terms.void_area_init = voids.area_init;
        terms.void_area_med = voids.area_med;

        let coverage_gap = &gaps[0];
        let taboo_gap = gaps.last().expect("at least one gap report");
        let scale2 = (fine.scale() * fine.scale()) as f64;
        let void_cells = voids.initial.area as f64 / scale2 + voids.intermediate.area as f64;

        Ok(EvaluationReport {
            total_loss: terms.weighted_total(&self.config),
            terms,
            coverage_strategy: self.coverage_strategy(),
            coverage_fraction: coverage_gap.coverage_fraction,
            overflow_ratio: coverage_gap.overflow_ratio,
            taboo_violation_fraction: taboo_gap.taboo_violation_fraction,
            void_area_fraction: void_cells / self.cool_sum,
            voids,
            dispensed_volume: initial.total_volume(),
            tolerance_mode: self.settings.tolerance_mode,
            gaps,
            trace: keep_trace.then_some(EvaluationTrace { initial, snapshots }),
        })
    }
}

/// Coverage terms of a normalised compressed state against all three targets.
/// `f_area = con` runs the constant strategy only; any other selector runs the
/// area strategy only.
pub fn coverage_loss(m_comp: &Grid<f64>, product: &Product, config: &ObjectiveConfig) -> Result<(CoverageTerms, CoverageStrategy)> {
    let areas = &product.areas;
    match config.f_area {
        AreaWeighting::Con => {
            let f = WeightingFunction::from(config.f_con);
            let cool_sum = areas.cool_sum();
            Ok((
                CoverageTerms {
                    cool: s_con(m_comp, &areas.cool, TargetKind::Cool, cool_sum, f)?,
                    over: s_con(m_comp, &areas.over, TargetKind::Over, cool_sum, f)?,
                    tab: s_con(m_comp, &areas.tab, TargetKind::Tab, cool_sum, f)?,
                },
                CoverageStrategy::SCon,
            ))
        }
        f => {
            let f_area = WeightingFunction::from(f);
            let (norm, cool) = AreaNormalizer::from_cool(&areas.cool, f_area)?;
            let term = |mask: &Grid<f64>, kind| -> Result<f64> {
                if mask.sum() <= 0.0 {
                    return Ok(0.0);
                }
                Ok(s_area_weighted(m_comp, &norm.weights_for(mask, kind, f_area)?, &norm, 0.0))
            };
            Ok((
                CoverageTerms {
                    cool: s_area_weighted(m_comp, &cool, &norm, 0.0),
                    over: term(&areas.over, TargetKind::Over)?,
                    tab: term(&areas.tab, TargetKind::Tab)?,
                },
                CoverageStrategy::SArea,
            ))
        }
    }
}

/// Full evaluation of one path against `gap` (overriding the product's gap spec).
pub fn total_loss(
    path: &DispensePath,
    product: &Product,
    config: &ObjectiveConfig,
    gap: &GapSpec,
    tolerance_mode: bool,
) -> Result<EvaluationReport> {
    let mut product = product.clone();
    product.gap = *gap;
    let settings = EvalSettings {
        tolerance_mode,
        ..Default::default()
    };
    Evaluator::new(&product, config, settings)?.evaluate(path)
}
