//! Expert-versus-optimized comparison at equal cooling coverage.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{DispensePath, GapSpec, ObjectiveConfig, Product};
use crate::objective::{EvalSettings, Evaluator};
use crate::optimizer::{calibrate_amount, Calibration};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathComparison {
    pub label: String,
    pub segments: usize,
    pub length: f64,
    /// `None` when calibration failed; see `error`.
    pub calibration: Option<Calibration>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub has_voids: Option<bool>,
    pub violates_taboo: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub product: String,
    pub gap: GapSpec,
    pub target_coverage: f64,
    pub expert: PathComparison,
    pub optimized: PathComparison,
    /// `|coverage(expert) - coverage(optimized)|` after calibration.
    pub coverage_difference: Option<f64>,
}

fn compare_one(
    label: &str,
    path: &DispensePath,
    product: &Product,
    target: f64,
    settings: EvalSettings,
) -> Result<PathComparison> {
    let mut out = PathComparison {
        label: label.to_string(),
        segments: path.segment_count(),
        length: path.length(),
        calibration: None,
        error: None,
        has_voids: None,
        violates_taboo: None,
    };
    match calibrate_amount(path, product, &product.gap, target, settings) {
        Ok(cal) => {
            let evaluator = Evaluator::new(product, &ObjectiveConfig::default(), settings)?;
            let report = evaluator.evaluate(&path.clone().with_feedrate(cal.feedrate))?;
            out.has_voids = Some(report.has_voids());
            out.violates_taboo = Some(report.taboo_violation_fraction > 0.0);
            out.calibration = Some(cal);
        }
        Err(e) => out.error = Some(e.to_string()),
    }
    Ok(out)
}

/// Calibrates both paths to the same coverage and reports their overflow.
/// Without an explicit `target`, the coverage the optimized path reaches at
/// the product's required volume is used.
pub fn compare_paths(
    product: &Product,
    expert: &DispensePath,
    optimized: &DispensePath,
    gap: &GapSpec,
    target: Option<f64>,
    settings: EvalSettings,
) -> Result<Comparison> {
    let mut product = product.clone();
    product.gap = *gap;
    let settings = EvalSettings {
        tolerance_mode: false,
        ..settings
    };
    let target = match target {
        Some(t) => t,
        None => {
            let nominal = optimized.clone().with_feedrate(product.required_volume() / optimized.length());
            let evaluator = Evaluator::new(&product, &ObjectiveConfig::default(), settings)?;
            evaluator.final_gap_report(&nominal)?.coverage_fraction
        }
    };
    let expert = compare_one("expert", expert, &product, target, settings)?;
    let optimized = compare_one("optimized", optimized, &product, target, settings)?;
    let coverage_difference = match (&expert.calibration, &optimized.calibration) {
        (Some(a), Some(b)) => Some((a.coverage_fraction - b.coverage_fraction).abs()),
        _ => None,
    };
    Ok(Comparison {
        product: product.name.clone(),
        gap: *gap,
        target_coverage: target,
        expert,
        optimized,
        coverage_difference,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::Point;
    use crate::optimizer::CALIBRATION_TOLERANCE;

    fn path(points: &[(f64, f64)]) -> DispensePath {
        DispensePath::new(points.iter().map(|&(x, y)| Point::new(x, y)).collect()).unwrap()
    }

    #[test]
    fn identical_paths_identical_overflow() {
        let p = fixtures::rectangle();
        let a = path(&[(14.0, 20.0), (36.0, 20.0), (36.0, 30.0), (14.0, 30.0)]);
        let c = compare_paths(&p, &a, &a, &p.gap, None, EvalSettings::default()).unwrap();
        let (e, o) = (c.expert.calibration.unwrap(), c.optimized.calibration.unwrap());
        assert_eq!(e.overflow_ratio, o.overflow_ratio);
        assert_eq!(c.coverage_difference, Some(0.0));
    }

    #[test]
    fn detour_overflows_more_at_equal_coverage() {
        let p = fixtures::rectangle();
        let interior = path(&[(14.0, 20.0), (36.0, 20.0), (36.0, 30.0), (14.0, 30.0)]);
        // Same meander, but it leaves the cooling surface between the rows.
        let detour = path(&[(14.0, 20.0), (36.0, 20.0), (46.0, 25.0), (36.0, 30.0), (14.0, 30.0)]);
        let c = compare_paths(&p, &detour, &interior, &p.gap, Some(0.9), EvalSettings::default()).unwrap();
        let (e, o) = (c.expert.calibration.unwrap(), c.optimized.calibration.unwrap());
        assert!(e.overflow_ratio > o.overflow_ratio, "{} vs {}", e.overflow_ratio, o.overflow_ratio);
        assert!(c.coverage_difference.unwrap() <= 2.0 * CALIBRATION_TOLERANCE);
    }

    #[test]
    fn calibration_failure_is_reported_per_path() {
        let p = fixtures::rectangle();
        let ok = path(&[(14.0, 25.0), (36.0, 25.0)]);
        // A bead far off the grid never covers anything.
        let off = path(&[(200.0, 200.0), (220.0, 200.0)]);
        let c = compare_paths(&p, &off, &ok, &p.gap, Some(0.5), EvalSettings::default()).unwrap();
        assert!(c.expert.calibration.is_none() && c.expert.error.is_some());
        assert!(c.optimized.calibration.is_some());
        assert_eq!(c.coverage_difference, None);
    }
}
