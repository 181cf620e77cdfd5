//! Append-only trial store: one document per trial plus an index that is
//! replaced atomically after every write.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::documents::{read_document, write_document};
use crate::error::{Error, Result};
use crate::optimizer::{rank, TrialFailure, TrialResult, TrialSpec};

pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub index: usize,
    pub seed: u64,
    pub n_segments: usize,
    pub file: String,
    pub coverage_fraction: f64,
    pub total_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StoreIndex {
    pub entries: Vec<IndexEntry>,
    #[serde(default)]
    pub failures: Vec<TrialFailure>,
}

impl StoreIndex {
    /// First trial index not used by any entry or failure.
    pub fn next_index(&self) -> usize {
        let used = self.entries.iter().map(|e| e.index);
        let failed = self.failures.iter().map(|f| f.spec.index);
        used.chain(failed).max().map_or(0, |m| m + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTrial {
    pub index: usize,
    pub trial: TrialResult,
}

pub struct TrialStore {
    dir: PathBuf,
    index: Mutex<StoreIndex>,
}

impl TrialStore {
    /// Opens `dir` for writing. An existing index is only accepted with
    /// `resume`, so earlier trials are never overwritten by accident.
    pub fn open(dir: &Path, resume: bool) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let index_path = dir.join(INDEX_FILE);
        let index = if index_path.exists() {
            if !resume {
                return Err(Error::invalid(
                    "results directory",
                    format!("{} already holds trials; resume to append", dir.display()),
                ));
            }
            read_document(&index_path)?
        } else {
            StoreIndex::default()
        };
        Ok(TrialStore {
            dir: dir.to_path_buf(),
            index: Mutex::new(index),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn index(&self) -> StoreIndex {
        self.index.lock().expect("index lock").clone()
    }

    pub fn next_index(&self) -> usize {
        self.index.lock().expect("index lock").next_index()
    }

    /// Persists one finished trial (or its failure) and rewrites the index.
    pub fn record(&self, spec: &TrialSpec, outcome: &Result<TrialResult>) -> Result<()> {
        let mut index = self.index.lock().expect("index lock");
        match outcome {
            Ok(trial) => {
                let file = format!("trial-{:05}.json", spec.index);
                write_document(
                    &self.dir.join(&file),
                    &StoredTrial {
                        index: spec.index,
                        trial: trial.clone(),
                    },
                )?;
                index.entries.push(IndexEntry {
                    index: spec.index,
                    seed: trial.seed,
                    n_segments: trial.n_segments,
                    file,
                    coverage_fraction: trial.best_report.coverage_fraction,
                    total_loss: trial.best_report.total_loss,
                });
                index.entries.sort_by_key(|e| e.index);
            }
            Err(e) => index.failures.push(TrialFailure {
                spec: *spec,
                error: e.to_string(),
            }),
        }
        write_document(&self.dir.join(INDEX_FILE), &*index)
    }

    /// Every stored trial in index order.
    pub fn load_trials(&self) -> Result<Vec<StoredTrial>> {
        load_trials(&self.dir)
    }
}

/// Reads the trials listed in `dir`'s index, in index order.
pub fn load_trials(dir: &Path) -> Result<Vec<StoredTrial>> {
    let index: StoreIndex = read_document(&dir.join(INDEX_FILE))?;
    index
        .entries
        .iter()
        .map(|e| read_document::<StoredTrial>(&dir.join(&e.file)))
        .collect()
}

/// Stored trials ranked best first.
pub fn ranked_trials(dir: &Path) -> Result<Vec<TrialResult>> {
    let mut trials: Vec<TrialResult> = load_trials(dir)?.into_iter().map(|t| t.trial).collect();
    trials.sort_by(rank);
    Ok(trials)
}
