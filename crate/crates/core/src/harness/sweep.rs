//! Hyperparameter sweep over objective configurations.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pixmap::Image;
use super::store::{load_trials, TrialStore};
use crate::error::{Error, Result};
use crate::model::{ObjectiveConfig, Product};
use crate::objective::{EvalSettings, EvaluationReport};
use crate::optimizer::{derive_seed, run_trial_specs, trial_specs, CmaesConfig, Problem};

/// Weights allowed in a sweep grid.
pub const WEIGHT_LEVELS: [f64; 5] = [0.0, 10.0, 100.0, 1000.0, 10000.0];

/// Convergence conditions of one run.
pub const MIN_COVERAGE: f64 = 0.80;
pub const MAX_TABOO: f64 = 0.01;
pub const MAX_VOID_AREA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub config: ObjectiveConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub configs: Vec<SweepEntry>,
    #[serde(default = "default_runs")]
    pub runs_per_config: usize,
    /// Inclusive segment-count range.
    #[serde(default = "default_segments")]
    pub segments: [usize; 2],
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stall_iterations: Option<usize>,
    #[serde(default)]
    pub eval: EvalSettings,
}

fn default_runs() -> usize {
    100
}

fn default_segments() -> [usize; 2] {
    [5, 10]
}

fn default_iterations() -> usize {
    1000
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.configs.is_empty() {
            return Err(Error::invalid("sweep", "needs at least one configuration"));
        }
        if self.runs_per_config == 0 || self.iterations == 0 {
            return Err(Error::invalid("sweep", "runs_per_config and iterations must be >= 1"));
        }
        for (i, e) in self.configs.iter().enumerate() {
            let c = &e.config;
            c.validate()?;
            let graded = [c.w_comp_cool, c.w_comp_tab, c.w_init_over, c.w_void_bin, c.w_void_area];
            if graded.iter().any(|w| !WEIGHT_LEVELS.contains(w)) {
                return Err(Error::invalid(
                    "sweep",
                    format!("config {i}: weights must be one of 0, 10, 100, 1000, 10000"),
                ));
            }
        }
        Ok(())
    }

    fn cmaes(&self) -> CmaesConfig {
        CmaesConfig {
            max_iterations: self.iterations,
            stall_iterations: self.stall_iterations,
            ..CmaesConfig::default()
        }
    }

    /// Base seed of configuration `i`; trial seeds derive from it.
    pub fn config_seed(&self, i: usize) -> u64 {
        derive_seed(self.seed, i as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub config: ObjectiveConfig,
    pub runs: usize,
    pub failures: usize,
    pub coverage_ratio: f64,
    pub convergence_ratio: f64,
    pub average_performance: f64,
}

pub fn converged(r: &EvaluationReport) -> bool {
    r.coverage_fraction >= MIN_COVERAGE && r.taboo_violation_fraction <= MAX_TABOO && r.void_area_fraction <= MAX_VOID_AREA
}

/// Metrics over the successful runs of one configuration.
pub fn sweep_row(entry: &SweepEntry, reports: &[&EvaluationReport], failures: usize) -> SweepRow {
    let n = reports.len();
    let (coverage_ratio, convergence_ratio) = if n == 0 {
        (0.0, 0.0)
    } else {
        let cov = reports.iter().map(|r| r.coverage_fraction.clamp(0.0, 1.0)).sum::<f64>() / n as f64;
        let conv = reports.iter().filter(|r| converged(r)).count() as f64 / n as f64;
        (cov, conv)
    };
    SweepRow {
        label: entry.label.clone(),
        config: entry.config.clone(),
        runs: n,
        failures,
        coverage_ratio,
        convergence_ratio,
        average_performance: (coverage_ratio + convergence_ratio) / 2.0,
    }
}

pub fn config_dir(out_dir: &Path, i: usize) -> std::path::PathBuf {
    out_dir.join(format!("config-{i:03}"))
}

/// Runs every configuration. With `out_dir`, each configuration's trials go
/// to their own store under it. `progress` sees (config index, finished runs).
pub fn run_sweep(
    product: &Product,
    sweep: &SweepConfig,
    parallelism: usize,
    out_dir: Option<&Path>,
    resume: bool,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<Vec<SweepRow>> {
    sweep.validate()?;
    let segments = sweep.segments[0]..=sweep.segments[1];
    let mut rows = Vec::with_capacity(sweep.configs.len());
    for (i, entry) in sweep.configs.iter().enumerate() {
        let problem =
            Problem::new(product, &entry.config, &product.gap, sweep.cmaes()).with_settings(sweep.eval);
        let store = out_dir.map(|d| TrialStore::open(&config_dir(d, i), resume)).transpose()?;
        let done = std::sync::atomic::AtomicUsize::new(0);
        let mut specs = trial_specs(segments.clone(), sweep.runs_per_config, sweep.config_seed(i))?;
        if let Some(s) = &store {
            // Resume: skip trials the store already holds.
            let have = s.next_index();
            specs.retain(|spec| spec.index >= have);
        }
        let record_error = std::sync::Mutex::new(None);
        let batch = run_trial_specs(&problem, &specs, parallelism, |spec, outcome| {
            if let Some(s) = &store {
                if let Err(e) = s.record(spec, outcome) {
                    record_error.lock().expect("lock").get_or_insert(e);
                }
            }
            progress(i, done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1);
        })?;
        if let Some(e) = record_error.into_inner().expect("lock") {
            return Err(e);
        }
        let row = match &store {
            Some(s) => row_from_store(entry, s.dir())?,
            None => {
                let reports: Vec<&EvaluationReport> = batch.results.iter().map(|r| &r.best_report).collect();
                sweep_row(entry, &reports, batch.failures.len())
            }
        };
        rows.push(row);
    }
    Ok(rows)
}

/// Recomputes a row from the trials persisted in `dir`.
pub fn row_from_store(entry: &SweepEntry, dir: &Path) -> Result<SweepRow> {
    let trials = load_trials(dir)?;
    let index: super::store::StoreIndex = super::documents::read_document(&dir.join(super::store::INDEX_FILE))?;
    let reports: Vec<&EvaluationReport> = trials.iter().map(|t| &t.trial.best_report).collect();
    Ok(sweep_row(entry, &reports, index.failures.len()))
}

/// Recomputes every row of a finished sweep from its output directory.
pub fn rows_from_dir(sweep: &SweepConfig, out_dir: &Path) -> Result<Vec<SweepRow>> {
    sweep
        .configs
        .iter()
        .enumerate()
        .map(|(i, e)| row_from_store(e, &config_dir(out_dir, i)))
        .collect()
}

fn weight_label(c: &ObjectiveConfig) -> String {
    format!(
        "cool={} over={} tab={} init={} voidBin={} voidArea={} f_con={:?} f_area={:?} f_init={:?}",
        c.w_comp_cool, c.w_comp_over, c.w_comp_tab, c.w_init_over, c.w_void_bin, c.w_void_area, c.f_con, c.f_area, c.f_init
    )
    .to_lowercase()
}

/// Plain-text table, one line per configuration, percentages.
pub fn format_table(rows: &[SweepRow]) -> String {
    let mut out = String::from("  #  coverage  convergence  average  runs  failed  config\n");
    for (i, r) in rows.iter().enumerate() {
        let name = r.label.clone().unwrap_or_else(|| weight_label(&r.config));
        out.push_str(&format!(
            "{i:>3}  {:>7.1}%  {:>10.1}%  {:>6.1}%  {:>4}  {:>6}  {name}\n",
            100.0 * r.coverage_ratio,
            100.0 * r.convergence_ratio,
            100.0 * r.average_performance,
            r.runs,
            r.failures
        ));
    }
    out
}

/// Heat table: one row of blocks per configuration with columns coverage,
/// convergence and average, shaded from red (0) to green (1).
pub fn render_heat_table(rows: &[SweepRow], block: usize) -> Image {
    let block = block.max(1);
    let mut img = Image::new(3 * block, rows.len().max(1) * block, [0, 0, 0]);
    for (i, r) in rows.iter().enumerate() {
        for (j, v) in [r.coverage_ratio, r.convergence_ratio, r.average_performance].into_iter().enumerate() {
            let v = v.clamp(0.0, 1.0);
            let c = [((1.0 - v) * 255.0).round() as u8, (v * 255.0).round() as u8, 0];
            for y in i * block..(i + 1) * block {
                for x in j * block..(j + 1) * block {
                    img.set(x, y, c);
                }
            }
        }
    }
    img
}
