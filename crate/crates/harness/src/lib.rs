//! Experiment harness for `colsketch`.
//!
//! A run reads an [`ExperimentConfig`], sweeps (sampler × c × model) cells on
//! a rayon pool and writes one CSV and one JSON table per sweep, next to a
//! manifest that is enough to repeat the run. Re-running from the manifest
//! reproduces every non-timing column exactly.

pub mod config;
pub mod error;
pub mod source;
pub mod sweeps;
pub mod table;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use table::{ResultRow, Table};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    ErrorSweep,
    MisalignmentSweep,
    GprBench,
    DeltaAccuracy,
}

impl Command {
    /// File stem of the tables this command writes.
    pub fn stem(self) -> &'static str {
        match self {
            Command::ErrorSweep => "error_sweep",
            Command::MisalignmentSweep => "misalignment_sweep",
            Command::GprBench => "gpr_bench",
            Command::DeltaAccuracy => "delta_accuracy",
        }
    }

    pub fn run(self, cfg: &ExperimentConfig) -> Result<Table> {
        match self {
            Command::ErrorSweep => sweeps::run_error_sweep(cfg),
            Command::MisalignmentSweep => sweeps::run_misalignment_sweep(cfg),
            Command::GprBench => sweeps::run_gpr_benchmark(cfg),
            Command::DeltaAccuracy => sweeps::run_delta_accuracy(cfg),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub command: Command,
    /// The effective config, command-line overrides included.
    pub config: ExperimentConfig,
    /// SHA-256 of the config's JSON encoding.
    pub config_hash: String,
    pub seed: u64,
    /// Worker threads used; informational, results do not depend on it.
    pub threads: usize,
    pub outputs: Vec<String>,
    pub failures: usize,
}

impl Manifest {
    pub fn file_name(command: Command) -> String {
        format!("{}.manifest.json", command.stem())
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.config_hash != config_hash(&m.config)? {
            return Err(HarnessError::Other(format!(
                "{}: config hash does not match its config",
                path.display()
            )));
        }
        Ok(m)
    }
}

pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let bytes = serde_json::to_vec(cfg)?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

/// Runs `f` on a pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| HarnessError::Other(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

pub struct RunOutput {
    pub table: Table,
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
}

/// Runs `command`, writes its tables and manifest into `out_dir`.
pub fn execute(
    command: Command,
    cfg: &ExperimentConfig,
    out_dir: &Path,
    threads: Option<usize>,
) -> Result<RunOutput> {
    cfg.validate()?;
    let (table, used) = with_threads(threads, || (command.run(cfg), rayon::current_num_threads()))?;
    let table = table?;
    let written = table::emit(&table, out_dir, command.stem())?;
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command,
        config: cfg.clone(),
        config_hash: config_hash(cfg)?,
        seed: cfg.seed,
        threads: used,
        outputs: written
            .iter()
            .filter_map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()))
            .collect(),
        failures: table.failures.len(),
    };
    let manifest_path = out_dir.join(Manifest::file_name(command));
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)
        .map_err(|e| HarnessError::io(&manifest_path, e))?;
    Ok(RunOutput {
        table,
        manifest,
        manifest_path,
    })
}

/// Repeats the run recorded in `manifest_path`, writing into `out_dir`.
pub fn rerun(manifest_path: &Path, out_dir: &Path, threads: Option<usize>) -> Result<RunOutput> {
    let m = Manifest::load(manifest_path)?;
    execute(m.command, &m.config, out_dir, threads)
}

/// Non-timing differences between the JSON table a manifest points at and
/// `table`.
pub fn compare_with_recorded(manifest_path: &Path, table: &Table) -> Result<Vec<String>> {
    let m = Manifest::load(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let json = m
        .outputs
        .iter()
        .find(|o| o.ends_with(".json"))
        .ok_or_else(|| HarnessError::Other("manifest lists no JSON table".into()))?;
    let recorded = table::read_json(&dir.join(json))?;
    Ok(recorded.differences(table))
}
