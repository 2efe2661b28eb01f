//! Batch scenario runner for the `qlink_core` simulator.
//!
//! A run reads a TOML config, builds the scenario, executes it inside a
//! dedicated thread pool and writes plot-ready CSV/JSON plus `summary.json`
//! and `manifest.json` into the output directory.

pub mod config;
pub mod error;
pub mod scenarios;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub use config::{Config, Params, ScenarioKind, SCHEMA_VERSION};
pub use error::CliError;
pub use scenarios::{prepare, Output, Plan};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub core_version: &'static str,
    pub scenario: ScenarioKind,
    pub schema_version: u32,
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub threads: usize,
    pub started_unix_s: u64,
    pub wall_time_s: f64,
    /// sha256 of every data file written.
    pub files: BTreeMap<String, String>,
    pub summary: BTreeMap<String, Value>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Apply command-line overrides to a loaded config.
pub fn apply_overrides(cfg: &mut Config, seed: Option<u64>, out: Option<PathBuf>, threads: Option<usize>) {
    if seed.is_some() {
        cfg.seed = seed;
    }
    if out.is_some() {
        cfg.out_dir = out;
    }
    if threads.is_some() {
        cfg.threads = threads;
    }
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::field("threads", e.to_string()))
}

/// Build the scenario without executing it.
pub fn validate(cfg: &Config) -> Result<Plan, CliError> {
    prepare(cfg)
}

/// Execute without touching the filesystem.
pub fn execute(cfg: &Config) -> Result<(Output, usize), CliError> {
    let plan = prepare(cfg)?;
    let pool = pool(cfg.threads)?;
    let threads = pool.current_num_threads();
    let out = pool.install(|| plan.execute())?;
    Ok((out, threads))
}

/// Run a scenario and write its artifacts into `out_dir`.
pub fn run(cfg: &Config, out_dir: &Path) -> Result<Manifest, CliError> {
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let clock = Instant::now();
    let (output, threads) = execute(cfg)?;
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let mut files = BTreeMap::new();
    let mut write = |name: &str, bytes: &[u8]| -> Result<(), CliError> {
        let path = out_dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        files.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    };
    for (name, bytes) in &output.files {
        write(name, bytes)?;
    }
    let mut summary = serde_json::to_vec_pretty(&output.summary).expect("summary serializes");
    summary.push(b'\n');
    write("summary.json", &summary)?;
    let manifest = Manifest {
        tool: "qlink",
        tool_version: VERSION,
        core_version: qlink_core::VERSION,
        scenario: cfg.scenario,
        schema_version: cfg.schema_version,
        config_sha256: sha256_hex(cfg.canonical_json().as_bytes()),
        seed: cfg.seed,
        threads,
        started_unix_s: started,
        wall_time_s: clock.elapsed().as_secs_f64(),
        files,
        summary: output.summary,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    let path = out_dir.join("manifest.json");
    std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
    Ok(manifest)
}
