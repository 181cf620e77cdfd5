//! `timpath`: evaluate, optimize, compare and sweep dispense paths.

use std::fs;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use timpath_core::harness::{
    self, compare_paths, documents, load_pixmap_product, render, sweep, to_document, write_atomic, write_document,
    Image, PathDocument, PixmapFormat, ProductDocument, ReportDocument, RunConfig, Scene, SweepConfig, TrialStore,
};
use timpath_core::optimizer::{rank, run_trial_specs, trial_specs, Problem, SEGMENT_RANGE};
use timpath_core::{fixtures, DispensePath, Error, ErrorClass, Evaluator, GapSpec, Product, Result, TrialResult};

#[derive(Parser)]
#[command(name = "timpath", version, about = "Dispense-path planning for thermal interface material")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one path and write its report (and images with --out-dir).
    Evaluate(EvaluateArgs),
    /// Run independent optimization trials and rank them.
    Optimize(OptimizeArgs),
    /// Compare two paths at equal cooling coverage.
    Compare(CompareArgs),
    /// Run a parameter sweep over objective configurations.
    Sweep(SweepArgs),
    /// Render masks, a path and optionally its material to a pixmap.
    Render(RenderArgs),
    /// Write a built-in synthetic product as a product document.
    Fixture(FixtureArgs),
}

#[derive(Args)]
struct ProductArgs {
    /// Product document (.json), colour pixmap (.ppm/.pnm) or `fixture:<name>`.
    #[arg(long)]
    product: String,
    /// Nominal gap; replaces the product's gap spec (required for pixmaps).
    #[arg(long)]
    gap: Option<f64>,
    /// Cell edge length for pixmap products.
    #[arg(long, default_value_t = 1.0)]
    cell_size: f64,
}

#[derive(Args)]
struct ImageArgs {
    /// Pixels per grid cell.
    #[arg(long, default_value_t = 4)]
    scale: usize,
    /// Write plain-text (P3) instead of binary (P6) pixmaps.
    #[arg(long)]
    ascii: bool,
}

impl ImageArgs {
    fn format(&self) -> PixmapFormat {
        if self.ascii {
            PixmapFormat::Ascii
        } else {
            PixmapFormat::Binary
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    product: ProductArgs,
    #[arg(long)]
    path: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    tolerance_mode: bool,
    /// Directory for report.json and the rendered states; stdout otherwise.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    image: ImageArgs,
}

#[derive(Args)]
struct OptimizeArgs {
    #[command(flatten)]
    product: ProductArgs,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    /// Segment count or inclusive range such as `5-10`.
    #[arg(long, default_value = "5", value_parser = parse_segments)]
    segments: RangeInclusive<usize>,
    /// Base seed; defaults to the config's.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    #[arg(long)]
    tolerance_mode: bool,
    /// Results directory (append-only trial store).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    top_k: usize,
    /// Append to an existing results directory.
    #[arg(long)]
    resume: bool,
    /// CMA-ES generations per trial; overrides the config.
    #[arg(long)]
    iterations: Option<usize>,
    /// Stop a trial after this many generations without improvement.
    #[arg(long)]
    stall: Option<usize>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    product: ProductArgs,
    #[arg(long)]
    expert: PathBuf,
    #[arg(long)]
    optimized: PathBuf,
    /// Coverage both paths are calibrated to; defaults to what the optimized
    /// path reaches with the required volume.
    #[arg(long)]
    target: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    product: ProductArgs,
    /// Sweep document.
    #[arg(long)]
    sweep: PathBuf,
    /// Runs per configuration; overrides the document.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, value_parser = parse_segments)]
    segments: Option<RangeInclusive<usize>>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    stall: Option<usize>,
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    #[arg(long)]
    tolerance_mode: bool,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    resume: bool,
    /// Pixels per heat-table block.
    #[arg(long, default_value_t = 16)]
    block: usize,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    product: ProductArgs,
    #[arg(long)]
    path: Option<PathBuf>,
    /// Material layer to draw: none, initial (dispensed) or final (compressed).
    #[arg(long, default_value = "final", value_parser = ["none", "initial", "final"])]
    state: String,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    image: ImageArgs,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(value_parser = fixtures::NAMES)]
    name: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_segments(s: &str) -> std::result::Result<RangeInclusive<usize>, String> {
    let num = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("bad segment count `{t}`"));
    let range = match s.split_once('-') {
        Some((a, b)) => num(a)?..=num(b)?,
        None => num(s)?..=num(s)?,
    };
    if range.is_empty() || !SEGMENT_RANGE.contains(range.start()) || !SEGMENT_RANGE.contains(range.end()) {
        return Err(format!("segments must lie in 1-10, got `{s}`"));
    }
    Ok(range)
}

fn load_product(args: &ProductArgs) -> Result<Product> {
    let gap = args.gap.map(GapSpec::nominal);
    let mut product = if let Some(name) = args.product.strip_prefix("fixture:") {
        fixtures::by_name(name).ok_or_else(|| Error::Invalid {
            what: "fixture",
            reason: format!("unknown fixture `{name}`; known: {}", fixtures::NAMES.join(", ")),
        })?
    } else {
        let path = Path::new(&args.product);
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        if ext == "ppm" || ext == "pnm" {
            let gap = gap.ok_or_else(|| Error::Invalid {
                what: "gap",
                reason: "pixmap products need --gap".into(),
            })?;
            load_pixmap_product(path, args.cell_size, gap)?
        } else {
            documents::load_product(path)?
        }
    };
    if let Some(g) = gap {
        g.validate()?;
        product.gap = g;
    }
    Ok(product)
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => documents::load_config(p),
        None => Ok(RunConfig::default()),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json value serializes"));
}

fn render_state(product: &Product, path: &DispensePath, state: Option<&timpath_core::MaterialGrid>, scale: usize) -> Image {
    let material = state.map(|s| harness::material_fraction(s, product.gap.g_final));
    render(
        &Scene {
            areas: Some(&product.areas),
            material: material.as_ref(),
            path: Some(path),
        },
        product.width(),
        product.height(),
        scale,
    )
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let product = load_product(&args.product)?;
    let config = load_config(&args.config)?;
    let path = documents::load_path(&args.path, &product)?;
    let mut settings = config.eval;
    settings.tolerance_mode |= args.tolerance_mode;
    let evaluator = Evaluator::new(&product, &config.objective, settings)?;
    let mut report = evaluator.evaluate_with_trace(&path)?;
    let trace = report.trace.take().expect("trace was requested");
    let doc = ReportDocument {
        product: product.name.clone(),
        config: config.objective.clone(),
        path: PathDocument::from_path(&path),
        report,
    };
    match &args.out_dir {
        Some(dir) => {
            create_dir(dir)?;
            write_document(&dir.join("report.json"), &doc)?;
            let format = args.image.format();
            render_state(&product, &path, Some(&trace.initial), args.image.scale)
                .write(&dir.join("initial.ppm"), format)?;
            let last = trace.snapshots.last().map(|s| &s.state);
            render_state(&product, &path, last, args.image.scale).write(&dir.join("final.ppm"), format)?;
            eprintln!(
                "coverage {:.4}, overflow {:.4}, loss {:.6}; wrote {}",
                doc.report.coverage_fraction,
                doc.report.overflow_ratio,
                doc.report.total_loss,
                dir.display()
            );
        }
        None => print!("{}", to_document(&doc)),
    }
    Ok(())
}

fn summary_entry(rank_pos: usize, t: &TrialResult, file: Option<String>) -> serde_json::Value {
    json!({
        "rank": rank_pos,
        "seed": t.seed,
        "n_segments": t.n_segments,
        "coverage_fraction": t.best_report.coverage_fraction,
        "taboo_violation_fraction": t.best_report.taboo_violation_fraction,
        "void_area_fraction": t.best_report.void_area_fraction,
        "has_voids": t.best_report.has_voids(),
        "total_loss": t.best_report.total_loss,
        "iterations": t.iterations,
        "evaluations": t.evaluations,
        "path_file": file,
    })
}

fn optimize(args: OptimizeArgs) -> Result<()> {
    let product = load_product(&args.product)?;
    let config = load_config(&args.config)?;
    let mut cmaes = config.cmaes.clone();
    if let Some(seed) = args.seed {
        cmaes.seed = seed;
    }
    if let Some(n) = args.iterations {
        cmaes.max_iterations = n;
    }
    if args.stall.is_some() {
        cmaes.stall_iterations = args.stall;
    }
    let mut settings = config.eval;
    settings.tolerance_mode |= args.tolerance_mode;
    if args.trials == 0 {
        return Err(Error::Invalid {
            what: "trials",
            reason: "need at least one trial".into(),
        });
    }
    let problem = Problem::new(&product, &config.objective, &product.gap, cmaes.clone()).with_settings(settings);
    problem.evaluator()?;

    let store = args.out_dir.as_deref().map(|d| TrialStore::open(d, args.resume)).transpose()?;
    // Trial indices continue after what the store holds, so resumed runs
    // draw fresh seeds.
    let first = store.as_ref().map_or(0, TrialStore::next_index);
    let specs: Vec<_> = trial_specs(args.segments.clone(), first + args.trials, cmaes.seed)?
        .into_iter()
        .skip(first)
        .collect();
    let record_error = std::sync::Mutex::new(None);
    let batch = run_trial_specs(&problem, &specs, args.parallelism, |spec, outcome| {
        match outcome {
            Ok(t) => eprintln!(
                "trial {} ({} segments, seed {}): coverage {:.4}, loss {:.6}",
                spec.index, spec.n_segments, spec.seed, t.best_report.coverage_fraction, t.best_report.total_loss
            ),
            Err(e) => eprintln!("trial {} failed: {e}", spec.index),
        }
        if let Some(s) = &store {
            if let Err(e) = s.record(spec, outcome) {
                record_error.lock().expect("lock").get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = record_error.into_inner().expect("lock") {
        return Err(e);
    }

    let (ranked, failures) = match &store {
        Some(s) => (harness::ranked_trials(s.dir())?, s.index().failures.len()),
        None => {
            let mut r = batch.results;
            r.sort_by(rank);
            (r, batch.failures.len())
        }
    };
    let mut top = Vec::new();
    for (i, t) in ranked.iter().take(args.top_k).enumerate() {
        let file = match &args.out_dir {
            Some(dir) => {
                let name = format!("top-{:02}.path.json", i + 1);
                write_document(&dir.join(&name), &PathDocument::from_path(&t.best_path))?;
                Some(name)
            }
            None => None,
        };
        top.push(summary_entry(i + 1, t, file));
    }
    print_json(&json!({
        "product": product.name,
        "trials": ranked.len(),
        "failures": failures,
        "top": top,
    }));
    Ok(())
}

fn compare(args: CompareArgs) -> Result<()> {
    let product = load_product(&args.product)?;
    let expert = documents::load_path(&args.expert, &product)?;
    let optimized = documents::load_path(&args.optimized, &product)?;
    let cmp = compare_paths(&product, &expert, &optimized, &product.gap, args.target, Default::default())?;
    match &args.out {
        Some(p) => write_document(p, &cmp)?,
        None => print!("{}", to_document(&cmp)),
    }
    for p in [&cmp.expert, &cmp.optimized] {
        match (&p.calibration, &p.error) {
            (Some(c), _) => eprintln!(
                "{}: {} segments, coverage {:.4}, overflow ratio {:.4}",
                p.label, p.segments, c.coverage_fraction, c.overflow_ratio
            ),
            (None, e) => eprintln!("{}: calibration failed: {}", p.label, e.as_deref().unwrap_or("unknown")),
        }
    }
    Ok(())
}

fn run_sweep(args: SweepArgs) -> Result<()> {
    let product = load_product(&args.product)?;
    let mut cfg: SweepConfig = harness::read_document(&args.sweep)?;
    if let Some(n) = args.trials {
        cfg.runs_per_config = n;
    }
    if let Some(s) = &args.segments {
        cfg.segments = [*s.start(), *s.end()];
    }
    if let Some(n) = args.iterations {
        cfg.iterations = n;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if args.stall.is_some() {
        cfg.stall_iterations = args.stall;
    }
    cfg.eval.tolerance_mode |= args.tolerance_mode;
    let total = cfg.configs.len();
    let runs = cfg.runs_per_config;
    let rows = sweep::run_sweep(
        &product,
        &cfg,
        args.parallelism,
        args.out_dir.as_deref(),
        args.resume,
        &|i, done| eprintln!("config {}/{total}: {done}/{runs} runs", i + 1),
    )?;
    let table = sweep::format_table(&rows);
    if let Some(dir) = &args.out_dir {
        write_document(&dir.join("rows.json"), &json!({ "rows": rows }))?;
        write_atomic(&dir.join("table.txt"), table.as_bytes())?;
        sweep::render_heat_table(&rows, args.block).write(&dir.join("heat.ppm"), PixmapFormat::Binary)?;
    }
    print!("{table}");
    Ok(())
}

fn render_cmd(args: RenderArgs) -> Result<()> {
    let product = load_product(&args.product)?;
    let path = args.path.as_deref().map(|p| documents::load_path(p, &product)).transpose()?;
    let trace = match (&path, args.state.as_str()) {
        (Some(p), "initial" | "final") => {
            let evaluator = Evaluator::new(&product, &Default::default(), Default::default())?;
            evaluator.evaluate_with_trace(p)?.trace
        }
        _ => None,
    };
    let material = trace.as_ref().and_then(|t| match args.state.as_str() {
        "initial" => Some(&t.initial),
        _ => t.snapshots.last().map(|s| &s.state),
    });
    let fraction = material.map(|m| harness::material_fraction(m, product.gap.g_final));
    let img = render(
        &Scene {
            areas: Some(&product.areas),
            material: fraction.as_ref(),
            path: path.as_ref(),
        },
        product.width(),
        product.height(),
        args.image.scale,
    );
    img.write(&args.out, args.image.format())
}

fn fixture(args: FixtureArgs) -> Result<()> {
    let product = fixtures::by_name(&args.name).expect("clap restricts fixture names");
    let doc = ProductDocument::from_product(&product);
    match &args.out {
        Some(p) => write_document(p, &doc),
        None => {
            print!("{}", to_document(&doc));
            Ok(())
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Parse => 2,
        ErrorClass::Validation => 3,
        ErrorClass::Flow => 4,
        ErrorClass::Io => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Evaluate(a) => evaluate(a),
        Command::Optimize(a) => optimize(a),
        Command::Compare(a) => compare(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Render(a) => render_cmd(a),
        Command::Fixture(a) => fixture(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
