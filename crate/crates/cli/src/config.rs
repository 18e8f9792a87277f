use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::Deserialize;
use skflow_core::SolverConfig;

use crate::usage;

pub const SCHEMA: u32 = 1;
pub const SEED_VAR: &str = "SKFLOW_SEED";

/// A study run as read from JSON. Unknown fields are rejected.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub study: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Also write a gnuplot script next to the rows.
    #[serde(default)]
    pub gnuplot: bool,
    /// Worker threads; 0 lets the pool decide.
    #[serde(default)]
    pub workers: usize,
}

fn default_samples() -> usize {
    20
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| usage(format!("config: {e}")))?;
        if cfg.schema != SCHEMA {
            return Err(usage(format!("config schema {} (expected {SCHEMA})", cfg.schema)));
        }
        cfg.solver
            .validate()
            .map_err(|e| usage(format!("config solver: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// The explicit seed, else `SKFLOW_SEED`.
pub fn resolve_seed(explicit: Option<u64>) -> Result<u64> {
    if let Some(s) = explicit {
        return Ok(s);
    }
    match std::env::var(SEED_VAR) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| usage(format!("{SEED_VAR}={v:?} is not an unsigned integer"))),
        Err(_) => Err(usage(format!("a seed is required: pass --seed or set {SEED_VAR}"))),
    }
}

/// Creates `dir` if needed and checks it accepts files.
pub fn prepare_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    let probe = dir.join(".skflow-write-test");
    fs::write(&probe, b"").map_err(|e| usage(format!("{} is not writable: {e}", dir.display())))?;
    let _ = fs::remove_file(probe);
    Ok(())
}

pub fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{} does not exist", path.display())))
    }
}
