//! Versioned JSON documents for products, paths, run configurations and reports.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{feedrate_for_path, DispensePath, GapSpec, ObjectiveConfig, Point, Product, TargetAreas};
use crate::objective::{EvalSettings, EvaluationReport};
use crate::optimizer::CmaesConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// Any document body tagged with the schema version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versioned<T> {
    pub schema_version: u32,
    #[serde(flatten)]
    pub body: T,
}

impl<T> Versioned<T> {
    pub fn new(body: T) -> Self {
        Versioned {
            schema_version: SCHEMA_VERSION,
            body,
        }
    }
}

/// Parses a versioned document. Syntax and type errors carry the line and
/// column reported by the JSON parser.
pub fn parse_document<T: DeserializeOwned>(text: &str, context: &str) -> Result<T> {
    #[derive(Deserialize)]
    struct Probe {
        schema_version: Option<u32>,
    }
    let probe: Probe = serde_json::from_str(text).map_err(|e| Error::parse(context, e))?;
    match probe.schema_version {
        Some(SCHEMA_VERSION) => {}
        Some(v) => {
            return Err(Error::parse(
                context,
                format!("unsupported schema_version {v} (this build reads {SCHEMA_VERSION})"),
            ))
        }
        None => return Err(Error::parse(context, "missing schema_version")),
    }
    let doc: Versioned<T> = serde_json::from_str(text).map_err(|e| Error::parse(context, e))?;
    Ok(doc.body)
}

pub fn to_document<T: Serialize>(body: &T) -> String {
    let mut s = serde_json::to_string_pretty(&Versioned::new(body)).expect("documents serialise");
    s.push('\n');
    s
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_document<T: DeserializeOwned>(path: &Path) -> Result<T> {
    parse_document(&read_text(path)?, &path.display().to_string())
}

/// Writes through a temporary file and a rename, so readers never see a
/// half-written document.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_document<T: Serialize>(path: &Path, body: &T) -> Result<()> {
    write_atomic(path, to_document(body).as_bytes())
}

/// Product file body. Masks are row-major, one inner array per row.
/// A missing `over` mask defaults to everything that is not cooling surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductDocument {
    pub name: String,
    pub width: usize,
    pub height: usize,
    #[serde(default = "unit")]
    pub cell_size: f64,
    pub gap: GapSpec,
    pub cool: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub over: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tab: Option<Vec<Vec<f64>>>,
}

fn unit() -> f64 {
    1.0
}

fn mask_rows(grid: &Grid<f64>) -> Vec<Vec<f64>> {
    grid.rows().map(<[f64]>::to_vec).collect()
}

fn mask_grid(name: &'static str, rows: &[Vec<f64>], width: usize, height: usize) -> Result<Grid<f64>> {
    let mismatch = |got_width, got_height| Error::DimensionMismatch {
        mask: name,
        width,
        height,
        got_width,
        got_height,
    };
    if rows.len() != height {
        return Err(mismatch(rows.first().map_or(0, Vec::len), rows.len()));
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != width) {
        return Err(mismatch(bad.len(), rows.len()));
    }
    Grid::from_vec(width, height, rows.concat()).ok_or_else(|| mismatch(width, height))
}

impl ProductDocument {
    pub fn from_product(product: &Product) -> Self {
        let a = &product.areas;
        ProductDocument {
            name: product.name.clone(),
            width: product.width(),
            height: product.height(),
            cell_size: product.cell_size,
            gap: product.gap,
            cool: mask_rows(&a.cool),
            over: Some(mask_rows(&a.over)),
            tab: Some(mask_rows(&a.tab)),
        }
    }

    pub fn into_product(self) -> Result<Product> {
        let (w, h) = (self.width, self.height);
        if w == 0 || h == 0 {
            return Err(Error::invalid("product", "grid dimensions must be positive"));
        }
        let cool = mask_grid("cool", &self.cool, w, h)?;
        let tab = match &self.tab {
            Some(rows) => mask_grid("tab", rows, w, h)?,
            None => Grid::filled(w, h, 0.0),
        };
        let over = match &self.over {
            Some(rows) => mask_grid("over", rows, w, h)?,
            None => cool.map(|c| 1.0 - c),
        };
        Product::new(self.name, self.cell_size, TargetAreas::new(cool, over, tab)?, self.gap)
    }
}

pub fn load_product(path: &Path) -> Result<Product> {
    read_document::<ProductDocument>(path)?.into_product()
}

/// Path file body. Without a feedrate the path dispenses the product's
/// required volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathDocument {
    pub points: Vec<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedrate: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frozen: Vec<bool>,
}

impl PathDocument {
    pub fn from_path(path: &DispensePath) -> Self {
        PathDocument {
            points: path.points.clone(),
            feedrate: Some(path.feedrate),
            frozen: path.frozen.clone(),
        }
    }

    pub fn into_path(self, product: &Product) -> Result<DispensePath> {
        let feedrate = match self.feedrate {
            Some(f) if f.is_finite() && f >= 0.0 => f,
            Some(f) => return Err(Error::invalid("feedrate", format!("must be finite and >= 0, got {f}"))),
            None => feedrate_for_path(&self.points, product.required_volume())?,
        };
        DispensePath::new(self.points)?.with_feedrate(feedrate).with_frozen(self.frozen)
    }
}

pub fn load_path(path: &Path, product: &Product) -> Result<DispensePath> {
    read_document::<PathDocument>(path)?.into_path(product)
}

/// Objective weights, optimizer and evaluation settings in one file. Every
/// section is optional; a missing objective section means the default
/// (best-performing) configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub cmaes: CmaesConfig,
    #[serde(default)]
    pub eval: EvalSettings,
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let cfg: RunConfig = read_document(path)?;
    cfg.objective.validate()?;
    cfg.cmaes.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub product: String,
    pub config: ObjectiveConfig,
    pub path: PathDocument,
    pub report: EvaluationReport,
}
