pub mod error;
pub mod fixtures;
pub mod flow;
pub mod grid;
pub mod harness;
pub mod imageops;
pub mod model;
pub mod objective;
pub mod optimizer;
pub mod raster;

pub use error::{Error, ErrorClass, Result};
pub use grid::Grid;
pub use model::{
    AreaWeighting, ConWeighting, DispensePath, GapSpec, InitWeighting, MaterialGrid, ObjectiveConfig, Point, Product,
    TargetAreas,
};
pub use objective::{EvalSettings, EvaluationReport, Evaluator, LossTerms};
pub use optimizer::{CmaesConfig, TrialResult};
