//! Instance x beta x Gamma grids with per-cell checkpoints.
//!
//! Checkpoint layout: `<dir>/<instance id>/b<beta index>-g<gamma index>.json`,
//! one `MomentRecord` per file, written atomically (temp file + rename).

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rayon::prelude::*;

use super::{run_chain, ChainParams, Hamiltonian, MomentRecord};
use crate::error::{Error, Result};
use crate::lattice::DisorderInstance;
use crate::rng::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub instance: usize,
    pub beta_index: usize,
    pub gamma_index: usize,
}

#[derive(Clone, Debug)]
pub struct GridSpec {
    /// `(id, instance)` pairs; ids name checkpoint directories and records.
    pub instances: Vec<(String, DisorderInstance)>,
    pub betas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub params: ChainParams,
    pub master_seed: u64,
    pub workers: usize,
    pub checkpoint_dir: Option<PathBuf>,
    /// When set, no new cells are started; in-flight cells finish.
    pub stop: Option<Arc<AtomicBool>>,
}

#[derive(Debug, Default)]
pub struct GridReport {
    /// Completed records ordered by cell key.
    pub records: Vec<MomentRecord>,
    pub failures: Vec<(CellKey, String)>,
    /// Cells served from existing checkpoints.
    pub resumed: usize,
    /// Cells whose checkpoint was unreadable and got recomputed.
    pub recovered: Vec<CellKey>,
    /// Cells not run because of a stop request.
    pub pending: Vec<CellKey>,
}

/// Seed of the chain for one grid cell.
pub fn cell_seed(master: u64, instance: &DisorderInstance, beta_index: usize, gamma_index: usize) -> u64 {
    derive_seed(master, &[instance.seed(), beta_index as u64, gamma_index as u64])
}

/// All cells of an `instances x betas x gammas` grid in key order.
pub fn grid_cells(instances: usize, betas: usize, gammas: usize) -> Vec<CellKey> {
    let mut cells = Vec::with_capacity(instances * betas * gammas);
    for instance in 0..instances {
        for beta_index in 0..betas {
            for gamma_index in 0..gammas {
                cells.push(CellKey { instance, beta_index, gamma_index });
            }
        }
    }
    cells
}

fn checkpoint_path(dir: &Path, id: &str, key: &CellKey) -> PathBuf {
    dir.join(id).join(format!("b{:03}-g{:03}.json", key.beta_index, key.gamma_index))
}

enum Cached {
    Hit(MomentRecord),
    Miss,
    Corrupt,
}

fn load_checkpoint(path: &Path, beta: f64, gamma: f64, params: &ChainParams) -> Cached {
    let Ok(text) = std::fs::read_to_string(path) else {
        return Cached::Miss;
    };
    match serde_json::from_str::<MomentRecord>(&text) {
        Ok(r) if r.beta == beta && r.gamma == gamma && r.trotter == params.trotter => Cached::Hit(r),
        _ => Cached::Corrupt,
    }
}

fn store_checkpoint(path: &Path, record: &MomentRecord) -> Result<()> {
    let parent = path.parent().expect("checkpoint path has a parent");
    std::fs::create_dir_all(parent)?;
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, serde_json::to_string(record)?)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

enum Outcome {
    Done(MomentRecord, bool, bool),
    Failed(String),
    Skipped,
}

pub fn run_grid(spec: &GridSpec) -> Result<GridReport> {
    if spec.instances.is_empty() || spec.betas.is_empty() || spec.gammas.is_empty() {
        return Err(Error::Validation("grid needs at least one instance, beta and Gamma".into()));
    }
    spec.params.validate()?;
    let cells = grid_cells(spec.instances.len(), spec.betas.len(), spec.gammas.len());
    let run_cell = |key: &CellKey| -> Outcome {
        if spec.stop.as_ref().is_some_and(|s| s.load(Ordering::SeqCst)) {
            return Outcome::Skipped;
        }
        let (id, instance) = &spec.instances[key.instance];
        let beta = spec.betas[key.beta_index];
        let gamma = spec.gammas[key.gamma_index];
        let path = spec.checkpoint_dir.as_ref().map(|d| checkpoint_path(d, id, key));
        let mut corrupt = false;
        if let Some(p) = &path {
            match load_checkpoint(p, beta, gamma, &spec.params) {
                Cached::Hit(r) => return Outcome::Done(r, true, false),
                Cached::Corrupt => corrupt = true,
                Cached::Miss => {}
            }
        }
        let seed = cell_seed(spec.master_seed, instance, key.beta_index, key.gamma_index);
        let result = Hamiltonian::new(instance.clone(), gamma)
            .and_then(|ham| run_chain(&ham, beta, &spec.params, seed, id));
        match result {
            Ok(record) => {
                if let Some(p) = &path {
                    if let Err(e) = store_checkpoint(p, &record) {
                        return Outcome::Failed(format!("checkpoint write failed: {e}"));
                    }
                }
                Outcome::Done(record, false, corrupt)
            }
            Err(e) => Outcome::Failed(e.to_string()),
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers.max(1))
        .build()
        .map_err(|e| Error::Validation(format!("worker pool: {e}")))?;
    let outcomes: Vec<Outcome> = pool.install(|| cells.par_iter().map(run_cell).collect());

    let mut report = GridReport::default();
    for (key, outcome) in cells.into_iter().zip(outcomes) {
        match outcome {
            Outcome::Done(record, resumed, recovered) => {
                report.resumed += usize::from(resumed);
                if recovered {
                    report.recovered.push(key);
                }
                report.records.push(record);
            }
            Outcome::Failed(reason) => report.failures.push((key, reason)),
            Outcome::Skipped => report.pending.push(key),
        }
    }
    Ok(report)
}
