use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commands::CliError;
use crate::config::{ExperimentConfig, Mode};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Complete,
    Partial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub cell: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub command: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub status: Status,
    pub cells_total: usize,
    pub cells_done: usize,
    pub resumed: usize,
    pub failures: Vec<Failure>,
    pub pending: Vec<String>,
    pub outputs: Vec<String>,
}

impl Entry {
    pub fn start(command: &str) -> Self {
        Entry {
            command: command.into(),
            started_unix: now(),
            finished_unix: 0,
            status: Status::Complete,
            cells_total: 0,
            cells_done: 0,
            resumed: 0,
            failures: Vec::new(),
            pending: Vec::new(),
            outputs: Vec::new(),
        }
    }
}

/// Run metadata. Timestamps live here and nowhere else, so record logs stay
/// byte-identical between runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub code_version: String,
    pub config_digest: String,
    pub mode: Mode,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub entries: Vec<Entry>,
}

pub fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: PathBuf) -> Result<Self, CliError> {
        fs::create_dir_all(&root).map_err(|e| CliError::io(&root, e))?;
        Ok(RunDir { root })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.path("manifest.json")
    }

    pub fn read_manifest(&self) -> Result<Option<Manifest>, CliError> {
        let p = self.manifest_path();
        if !p.exists() {
            return Ok(None);
        }
        Ok(Some(read_json(&p)?))
    }

    /// Opens the manifest for `config`, refusing a directory that belongs to a
    /// different configuration.
    pub fn manifest_for(&self, config: &ExperimentConfig) -> Result<Manifest, CliError> {
        let digest = config.digest();
        match self.read_manifest()? {
            Some(m) if m.config_digest != digest => Err(CliError::Validation(format!(
                "{} belongs to a run with config digest {}, not {digest}",
                self.root.display(),
                m.config_digest
            ))),
            Some(m) => Ok(m),
            None => Ok(Manifest {
                code_version: CODE_VERSION.into(),
                config_digest: digest,
                mode: config.mode,
                seed: config.master_seed(),
                config: config.clone(),
                entries: Vec::new(),
            }),
        }
    }

    pub fn save_manifest(&self, m: &Manifest) -> Result<(), CliError> {
        write_atomic(&self.manifest_path(), (serde_json::to_string_pretty(m).expect("manifest") + "\n").as_bytes())
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_atomic(path, (serde_json::to_string_pretty(value).expect("serializable") + "\n").as_bytes())
}

/// One JSON document per line.
pub fn write_ndjson<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).expect("serializable"));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_ndjson<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Failed(format!("{} line {}: {e}", path.display(), k + 1)))
        })
        .collect()
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}
