//! One-segment optimization on a thin strip against exhaustive search.

use timpath_core::optimizer::{optimize, CmaesConfig};
use timpath_core::{fixtures, DispensePath, EvalSettings, Evaluator, ObjectiveConfig, Point};

#[test]
fn single_segment_aligns_with_strip() {
    let product = fixtures::strip();
    let config = ObjectiveConfig::default();
    let evaluator = Evaluator::new(&product, &config, EvalSettings::default()).unwrap();
    let volume = product.required_volume();

    // Oracle: every 2-point path with endpoints on a lattice over the strip
    // and its surroundings.
    let mut lattice = Vec::new();
    for x in (1..=49).step_by(4) {
        for y in (19..=31).step_by(2) {
            lattice.push(Point::new(x as f64, y as f64));
        }
    }
    let mut oracle: Option<(f64, f64, Point, Point)> = None;
    for (i, &a) in lattice.iter().enumerate() {
        for &b in &lattice[i + 1..] {
            let path = DispensePath::new(vec![a, b]).unwrap();
            let path = path.clone().with_feedrate(volume / path.length());
            let r = evaluator.evaluate(&path).unwrap();
            if oracle.is_none_or(|o| r.total_loss < o.0) {
                oracle = Some((r.total_loss, r.coverage_fraction, a, b));
            }
        }
    }
    let (oracle_loss, oracle_coverage, oa, ob) = oracle.unwrap();
    assert!((oa.y - 25.0).abs() < 1e-12 && (ob.y - 25.0).abs() < 1e-12, "oracle picked {oa:?} {ob:?}");

    let cmaes = CmaesConfig {
        max_iterations: 300,
        seed: 11,
        ..CmaesConfig::default()
    };
    let trial = optimize(&product, &config, &product.gap, 1, &cmaes).unwrap();
    let (a, b) = (trial.best_path.points[0], trial.best_path.points[1]);

    assert!(oracle_coverage >= 0.9);
    assert!(trial.best_report.coverage_fraction >= 0.9);
    assert!(trial.best_report.total_loss <= oracle_loss + 1e-9);
    assert!((b.y - a.y).abs() <= 0.1 * (b.x - a.x).abs());
}
