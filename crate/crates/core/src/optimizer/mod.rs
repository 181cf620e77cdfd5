//! Path search: CMA-ES over the free point coordinates, repeated trials and
//! dispense-amount calibration.

mod cmaes;

use std::cmp::Ordering;
use std::ops::RangeInclusive;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cmaes::{minimize, Cmaes, CmaesConfig, Minimum, Termination};

use crate::error::{Error, Result};
use crate::model::{
    feedrate_for_path, AreaWeighting, DispensePath, GapSpec, InitWeighting, ObjectiveConfig, Point, Product,
};
use crate::objective::{EvalSettings, EvaluationReport, Evaluator};
use cmaes::Stopper;

/// Allowed segment counts for generated paths.
pub const SEGMENT_RANGE: RangeInclusive<usize> = 1..=10;

/// Standard deviation, in grid units, of the seeded jitter around the
/// cooling centroid that forms the initial mean.
const START_JITTER: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub n_segments: usize,
    pub best_path: DispensePath,
    pub best_report: EvaluationReport,
    /// Best loss of each generation, restarts concatenated.
    pub loss_history: Vec<f64>,
    pub evaluations: usize,
    pub iterations: usize,
    pub termination: Termination,
    /// Smallest covariance eigenvalue seen during the trial.
    pub min_eigenvalue: f64,
}

/// Everything a trial needs besides its seed and segment count.
#[derive(Debug, Clone)]
pub struct Problem {
    pub product: Product,
    pub config: ObjectiveConfig,
    pub settings: EvalSettings,
    pub cmaes: CmaesConfig,
}

impl Problem {
    /// `gap` replaces the product's own gap spec.
    pub fn new(product: &Product, config: &ObjectiveConfig, gap: &GapSpec, cmaes: CmaesConfig) -> Self {
        let mut product = product.clone();
        product.gap = *gap;
        Problem {
            product,
            config: config.clone(),
            settings: EvalSettings::default(),
            cmaes,
        }
    }

    pub fn with_settings(mut self, settings: EvalSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn evaluator(&self) -> Result<Evaluator> {
        self.cmaes.validate()?;
        Evaluator::new(&self.product, &self.config, self.settings)
    }
}

/// Maps search vectors to dispense paths, re-inserting frozen coordinates.
struct Encoding {
    template: Vec<f64>,
    free: Vec<usize>,
    frozen: Vec<bool>,
    volume: f64,
}

impl Encoding {
    fn new(template: &DispensePath, volume: f64) -> Self {
        let template_coords = template.coordinates();
        let free = (0..template_coords.len()).filter(|&i| !template.is_frozen(i)).collect();
        Encoding {
            template: template_coords,
            free,
            frozen: template.frozen.clone(),
            volume,
        }
    }

    fn path(&self, x: &[f64]) -> Result<DispensePath> {
        let mut coords = self.template.clone();
        for (&i, &v) in self.free.iter().zip(x) {
            coords[i] = v;
        }
        let points: Vec<Point> = coords.chunks(2).map(|c| Point::new(c[0], c[1])).collect();
        let feedrate = feedrate_for_path(&points, self.volume)?;
        DispensePath::new(points)?.with_feedrate(feedrate).with_frozen(self.frozen.clone())
    }
}

/// Runs one trial with `n_segments` segments, all coordinates free.
pub fn optimize(
    product: &Product,
    config: &ObjectiveConfig,
    gap: &GapSpec,
    n_segments: usize,
    cmaes: &CmaesConfig,
) -> Result<TrialResult> {
    let problem = Problem::new(product, config, gap, cmaes.clone());
    let evaluator = problem.evaluator()?;
    optimize_with(&evaluator, &problem.cmaes, n_segments, cmaes.seed)
}

/// Like [`optimize`] with a prepared evaluator; the seed overrides `cmaes.seed`.
pub fn optimize_with(evaluator: &Evaluator, cmaes: &CmaesConfig, n_segments: usize, seed: u64) -> Result<TrialResult> {
    if !SEGMENT_RANGE.contains(&n_segments) {
        return Err(Error::invalid(
            "segment count",
            format!("must be in 1..=10, got {n_segments}"),
        ));
    }
    let c = evaluator.product().cooling_centroid();
    let points = vec![c; n_segments + 1];
    let template = DispensePath { points, feedrate: 0.0, frozen: Vec::new() };
    optimize_template(evaluator, cmaes, &template, seed)
}

/// Optimises the free coordinates of `template`. Frozen coordinates are kept
/// bit for bit; free ones start at their template value plus seeded jitter.
pub fn optimize_template(
    evaluator: &Evaluator,
    cmaes: &CmaesConfig,
    template: &DispensePath,
    seed: u64,
) -> Result<TrialResult> {
    cmaes.validate()?;
    let encoding = Encoding::new(template, evaluator.product().required_volume());
    let n = encoding.free.len();
    if n == 0 {
        return Err(Error::invalid("dispense path", "every coordinate is frozen"));
    }
    let lambda = cmaes.lambda_for(n);

    let mut best: Option<(DispensePath, EvaluationReport)> = None;
    let mut history = Vec::new();
    let (mut evaluations, mut iterations) = (0, 0);
    let mut min_eigenvalue = f64::INFINITY;
    let mut termination = Termination::MaxIterations;

    for restart in 0..=cmaes.restart_count {
        let run_seed = derive_seed(seed, restart as u64);
        let mut jitter = ChaCha8Rng::seed_from_u64(run_seed);
        jitter.set_stream(1);
        let mean: Vec<f64> = encoding
            .free
            .iter()
            .map(|&i| {
                let z: f64 = StandardNormal.sample(&mut jitter);
                encoding.template[i] + START_JITTER * z
            })
            .collect();
        let mut es = Cmaes::new(mean, cmaes.sigma0, lambda, run_seed)?;
        let mut stopper = Stopper::new(cmaes, n, lambda);
        loop {
            let candidates = es.ask();
            let generation = es.generation();
            let outcomes: Vec<Result<(DispensePath, EvaluationReport)>> = candidates
                .par_iter()
                .map(|x| {
                    let path = encoding.path(x)?;
                    let report = evaluator.evaluate(&path)?;
                    Ok((path, report))
                })
                .collect();
            let mut fitness = Vec::with_capacity(outcomes.len());
            let mut gen_best = f64::INFINITY;
            for outcome in outcomes {
                let (path, report) = outcome.map_err(|e| Error::Evaluation {
                    iteration: iterations + generation,
                    source: Box::new(e),
                })?;
                fitness.push(report.total_loss);
                gen_best = gen_best.min(report.total_loss);
                if best.as_ref().is_none_or(|(_, b)| report.total_loss < b.total_loss) {
                    best = Some((path, report));
                }
            }
            evaluations += fitness.len();
            history.push(gen_best);
            es.tell(&fitness)?;
            if let Some(t) = stopper.check(&es, &fitness) {
                termination = t;
                break;
            }
        }
        iterations += es.generation();
        min_eigenvalue = min_eigenvalue.min(es.min_eigenvalue());
        if termination == Termination::MaxIterations {
            break;
        }
    }
    let (best_path, best_report) = best.expect("at least one generation ran");
    Ok(TrialResult {
        seed,
        n_segments: template.segment_count(),
        best_path,
        best_report,
        loss_history: history,
        evaluations,
        iterations,
        termination,
        min_eigenvalue,
    })
}

/// SplitMix64 finaliser; spreads nearby seeds over the whole state space.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One planned trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub index: usize,
    pub n_segments: usize,
    pub seed: u64,
}

/// Trials cycle through `segments`; seeds derive from `base_seed` and the index.
pub fn trial_specs(segments: RangeInclusive<usize>, n_trials: usize, base_seed: u64) -> Result<Vec<TrialSpec>> {
    if n_trials == 0 {
        return Err(Error::invalid("trial count", "must be >= 1"));
    }
    let (lo, hi) = (*segments.start(), *segments.end());
    if lo > hi || !SEGMENT_RANGE.contains(&lo) || !SEGMENT_RANGE.contains(&hi) {
        return Err(Error::invalid("segment range", format!("{lo}..={hi} is not within 1..=10")));
    }
    let span = hi - lo + 1;
    Ok((0..n_trials)
        .map(|index| TrialSpec {
            index,
            n_segments: lo + index % span,
            seed: derive_seed(base_seed, index as u64),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub spec: TrialSpec,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialBatch {
    /// Best coverage first, ties by lower loss.
    pub results: Vec<TrialResult>,
    pub failures: Vec<TrialFailure>,
}

/// Ranking used for trial lists: coverage descending, then loss ascending,
/// then seed so the order is total.
pub fn rank(a: &TrialResult, b: &TrialResult) -> Ordering {
    b.best_report
        .coverage_fraction
        .total_cmp(&a.best_report.coverage_fraction)
        .then(a.best_report.total_loss.total_cmp(&b.best_report.total_loss))
        .then(a.seed.cmp(&b.seed))
}

/// Runs `n_trials` independent trials over `segments` on a pool of
/// `parallelism` workers.
pub fn run_trials(
    problem: &Problem,
    segments: RangeInclusive<usize>,
    n_trials: usize,
    parallelism: usize,
) -> Result<TrialBatch> {
    let specs = trial_specs(segments, n_trials, problem.cmaes.seed)?;
    run_trial_specs(problem, &specs, parallelism, |_, _| {})
}

/// Runs the given trials; `on_done` sees every trial as it finishes (from
/// worker threads). A failed trial is recorded and the rest continue.
pub fn run_trial_specs<F>(problem: &Problem, specs: &[TrialSpec], parallelism: usize, on_done: F) -> Result<TrialBatch>
where
    F: Fn(&TrialSpec, &Result<TrialResult>) + Sync,
{
    let evaluator = problem.evaluator()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::invalid("worker pool", e.to_string()))?;
    let outcomes: Vec<Result<TrialResult>> = pool.install(|| {
        specs
            .par_iter()
            .map(|spec| {
                let outcome = optimize_with(&evaluator, &problem.cmaes, spec.n_segments, spec.seed);
                on_done(spec, &outcome);
                outcome
            })
            .collect()
    });
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (spec, outcome) in specs.iter().zip(outcomes) {
        match outcome {
            Ok(r) => results.push(r),
            Err(e) => failures.push(TrialFailure {
                spec: *spec,
                error: e.to_string(),
            }),
        }
    }
    results.sort_by(rank);
    Ok(TrialBatch { results, failures })
}

/// Coverage tolerance of [`calibrate_amount`].
pub const CALIBRATION_TOLERANCE: f64 = 0.002;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub feedrate: f64,
    pub volume: f64,
    pub coverage_fraction: f64,
    pub overflow_ratio: f64,
    pub taboo_violation_fraction: f64,
    pub steps: usize,
}

/// Bisects the dispensed volume in `[0, 4 * required]` until the coverage at
/// `g_final` is within [`CALIBRATION_TOLERANCE`] of `target_coverage`.
pub fn calibrate_amount(
    path: &DispensePath,
    product: &Product,
    gap: &GapSpec,
    target_coverage: f64,
    settings: EvalSettings,
) -> Result<Calibration> {
    if !(target_coverage > 0.0 && target_coverage <= 1.0) {
        return Err(Error::Calibration(format!(
            "target coverage must be in (0, 1], got {target_coverage}"
        )));
    }
    let length = path.length();
    if length <= 0.0 {
        return Err(Error::ZeroLengthPath);
    }
    let mut product = product.clone();
    product.gap = *gap;
    // Coverage does not depend on the loss configuration; skip its precomputation.
    let config = ObjectiveConfig {
        f_area: AreaWeighting::Con,
        f_init: InitWeighting::None,
        ..ObjectiveConfig::default()
    };
    let evaluator = Evaluator::new(&product, &config, EvalSettings { tolerance_mode: false, ..settings })?;
    let measure = |volume: f64| -> Result<Calibration> {
        let feedrate = volume / length;
        let r = evaluator.final_gap_report(&path.clone().with_feedrate(feedrate))?;
        Ok(Calibration {
            feedrate,
            volume,
            coverage_fraction: r.coverage_fraction,
            overflow_ratio: r.overflow_ratio,
            taboo_violation_fraction: r.taboo_violation_fraction,
            steps: 0,
        })
    };
    let (mut lo, mut hi) = (0.0, 4.0 * product.required_volume());
    let top = measure(hi)?;
    if top.coverage_fraction < target_coverage - CALIBRATION_TOLERANCE {
        return Err(Error::Calibration(format!(
            "coverage {:.4} at 4x the required volume is below the target {target_coverage}",
            top.coverage_fraction
        )));
    }
    for step in 1..=200 {
        let mid = 0.5 * (lo + hi);
        let mut m = measure(mid)?;
        m.steps = step;
        if (m.coverage_fraction - target_coverage).abs() <= CALIBRATION_TOLERANCE {
            return Ok(m);
        }
        if m.coverage_fraction < target_coverage {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    Err(Error::Calibration(format!(
        "no volume within [0, {:.4}] reaches coverage {target_coverage} +- {CALIBRATION_TOLERANCE}",
        4.0 * product.required_volume()
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn quick() -> CmaesConfig {
        CmaesConfig {
            max_iterations: 15,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn trial_is_deterministic() {
        let p = fixtures::rectangle();
        let cfg = ObjectiveConfig::default();
        let a = optimize(&p, &cfg, &p.gap, 3, &quick()).unwrap();
        let b = optimize(&p, &cfg, &p.gap, 3, &quick()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.best_path.points.len(), 4);
        assert_eq!(a.evaluations, 15 * CmaesConfig::default().lambda_for(8));
    }

    #[test]
    fn history_running_minimum_matches_best() {
        let p = fixtures::rectangle();
        let r = optimize(&p, &ObjectiveConfig::default(), &p.gap, 2, &quick()).unwrap();
        let min = r.loss_history.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(min, r.best_report.total_loss);
        assert!((r.best_path.volume() - p.required_volume()).abs() < 1e-9 * p.required_volume());
    }

    #[test]
    fn frozen_coordinates_never_move() {
        let p = fixtures::rectangle();
        let evaluator = Evaluator::new(&p, &ObjectiveConfig::default(), EvalSettings::default()).unwrap();
        let pts = vec![Point::new(10.123456789, 15.5), Point::new(25.0, 25.0), Point::new(39.9, 34.2)];
        let frozen = vec![true, true, false, false, true, false];
        let template = DispensePath::new(pts.clone()).unwrap().with_frozen(frozen).unwrap();
        let r = optimize_template(&evaluator, &quick(), &template, 5).unwrap();
        assert_eq!(r.best_path.points[0].x.to_bits(), pts[0].x.to_bits());
        assert_eq!(r.best_path.points[0].y.to_bits(), pts[0].y.to_bits());
        assert_eq!(r.best_path.points[2].x.to_bits(), pts[2].x.to_bits());
        assert_ne!(r.best_path.points[2].y, pts[2].y);
    }

    #[test]
    fn segment_count_is_checked() {
        let p = fixtures::rectangle();
        for n in [0, 11] {
            assert!(optimize(&p, &ObjectiveConfig::default(), &p.gap, n, &quick()).is_err());
        }
    }

    #[test]
    fn specs_cycle_segments_and_seeds_differ() {
        let specs = trial_specs(5..=7, 7, 42).unwrap();
        let segs: Vec<usize> = specs.iter().map(|s| s.n_segments).collect();
        assert_eq!(segs, vec![5, 6, 7, 5, 6, 7, 5]);
        let mut seeds: Vec<u64> = specs.iter().map(|s| s.seed).collect();
        seeds.sort();
        seeds.dedup();
        assert_eq!(seeds.len(), 7);
        assert!(trial_specs(0..=3, 1, 0).is_err());
        assert!(trial_specs(3..=3, 0, 0).is_err());
    }

    #[test]
    fn ranking_prefers_coverage_then_loss() {
        let p = fixtures::rectangle();
        let base = optimize(&p, &ObjectiveConfig::default(), &p.gap, 1, &CmaesConfig { max_iterations: 1, ..quick() }).unwrap();
        let with = |cov: f64, loss: f64, seed: u64| {
            let mut r = base.clone();
            r.best_report.coverage_fraction = cov;
            r.best_report.total_loss = loss;
            r.seed = seed;
            r
        };
        let mut v = [with(0.5, 1.0, 0), with(0.9, 5.0, 1), with(0.9, 2.0, 2), with(0.7, 0.1, 3)];
        v.sort_by(rank);
        let seeds: Vec<u64> = v.iter().map(|r| r.seed).collect();
        assert_eq!(seeds, vec![2, 1, 3, 0]);
    }

    #[test]
    fn single_trial_batch_equals_optimize() {
        let p = fixtures::rectangle();
        let cfg = ObjectiveConfig::default();
        let problem = Problem::new(&p, &cfg, &p.gap, quick());
        let batch = run_trials(&problem, 2..=2, 1, 1).unwrap();
        let spec = trial_specs(2..=2, 1, quick().seed).unwrap()[0];
        let direct = optimize(&p, &cfg, &p.gap, 2, &CmaesConfig { seed: spec.seed, ..quick() }).unwrap();
        assert_eq!(batch.results, vec![direct]);
        assert!(batch.failures.is_empty());
    }

    fn straight(p: &Product) -> DispensePath {
        let c = p.cooling_centroid();
        DispensePath::new(vec![Point::new(c.x - 10.0, c.y), Point::new(c.x + 10.0, c.y)]).unwrap()
    }

    #[test]
    fn calibration_fixed_point() {
        let p = fixtures::rectangle();
        let path = straight(&p);
        let nominal = p.required_volume() / path.length();
        let reached = Evaluator::new(&p, &ObjectiveConfig::default(), EvalSettings::default())
            .unwrap()
            .final_gap_report(&path.clone().with_feedrate(nominal))
            .unwrap()
            .coverage_fraction;
        let cal = calibrate_amount(&path, &p, &p.gap, reached, EvalSettings::default()).unwrap();
        assert!((cal.coverage_fraction - reached).abs() <= CALIBRATION_TOLERANCE);
        assert!((cal.feedrate - nominal).abs() / nominal < 0.05, "{} vs {nominal}", cal.feedrate);
    }

    #[test]
    fn calibration_full_coverage_overflows() {
        let p = fixtures::rectangle();
        let cal = calibrate_amount(&straight(&p), &p, &p.gap, 1.0, EvalSettings::default()).unwrap();
        assert!(cal.coverage_fraction >= 1.0 - CALIBRATION_TOLERANCE);
        assert!(cal.overflow_ratio > 0.0);
    }

    #[test]
    fn calibration_rejects_degenerate_targets() {
        let p = fixtures::rectangle();
        for t in [0.0, -0.5, 1.5, f64::NAN] {
            assert!(matches!(
                calibrate_amount(&straight(&p), &p, &p.gap, t, EvalSettings::default()),
                Err(Error::Calibration(_))
            ));
        }
    }
}
