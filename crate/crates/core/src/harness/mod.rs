//! Experiment orchestration behind the `iomtrade` CLI: configuration,
//! the trading (Phase I) and learning (Phase II) pipelines, CSV artifacts
//! and the run manifest.

mod config;
mod output;
mod pipeline;

pub use config::{
    BenchmarkSettings, ExperimentConfig, Instance, MddrSettings, OmegaSource, Phase1Solver,
    SimulateSettings, SolverSettings, DEFAULT_SEED,
};
pub use output::{emit_csv, format_sig9, schema, Cell, Schema, SCHEMAS};
pub use pipeline::{
    benchmark_instance, benchmark_instances, phase1, split_seed, trailing_stats, BenchmarkInstance,
    Phase1Outcome, SchemeRow, IMMERSION_AWARE,
};

use std::path::{Path, PathBuf};

use serde_json::json;
use sha2::{Digest, Sha256};

use crate::equilibrium::EquilibriumError;
use crate::flsim::FlError;
use crate::market::ConfigErrors;
use crate::mddr::MddrError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("override `{item}`: {reason}")]
    Override { item: String, reason: String },
    #[error(transparent)]
    InvalidConfig(#[from] ConfigErrors),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error(transparent)]
    Mddr(#[from] MddrError),
    #[error(transparent)]
    Fl(#[from] FlError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Schema(String),
}

impl HarnessError {
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Io(..) => "io",
            HarnessError::Config(_) => "config",
            HarnessError::Override { .. } => "override",
            HarnessError::InvalidConfig(_) => "invalid_config",
            HarnessError::Equilibrium(_) => "equilibrium",
            HarnessError::Mddr(_) => "mddr",
            HarnessError::Fl(_) => "flsim",
            HarnessError::Csv(_) => "csv",
            HarnessError::Schema(_) => "schema",
        }
    }

    /// One-line machine-readable form: `{"error": kind, "message": text}`.
    pub fn to_json(&self) -> String {
        json!({ "error": self.kind(), "message": self.to_string() }).to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    SolveNe,
    TrainMddr,
    Benchmark,
    Simulate,
    VerifyAll,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SolveNe => "solve-ne",
            Command::TrainMddr => "train-mddr",
            Command::Benchmark => "benchmark",
            Command::Simulate => "simulate",
            Command::VerifyAll => "verify-all",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub config_path: Option<PathBuf>,
    pub command: Command,
    /// Replaces the config's seed when set.
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    /// `key=value`, applied in order before validation.
    pub overrides: Vec<String>,
    /// Worker threads for independent instances.
    pub jobs: usize,
}

/// What a command produced.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunReport {
    /// Human-readable summary, one line each.
    pub lines: Vec<String>,
    /// False when `verify-all` found a failing check.
    pub success: bool,
    /// Files written, relative to the output directory.
    pub files: Vec<String>,
}

/// Collects artifacts in the output directory.
pub(crate) struct Artifacts {
    dir: PathBuf,
    files: Vec<(String, &'static str)>,
}

impl Artifacts {
    fn new(dir: &Path) -> Result<Self, HarnessError> {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io(dir.display().to_string(), e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub(crate) fn csv(
        &mut self,
        name: &str,
        schema_id: &'static str,
        rows: &[Vec<Cell>],
    ) -> Result<(), HarnessError> {
        emit_csv(rows, schema_id, &self.dir.join(name))?;
        self.files.push((name.to_string(), schema_id));
        Ok(())
    }

    pub(crate) fn text(
        &mut self,
        name: &str,
        kind: &'static str,
        contents: &[u8],
    ) -> Result<(), HarnessError> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents)
            .map_err(|e| HarnessError::Io(path.display().to_string(), e))?;
        self.files.push((name.to_string(), kind));
        Ok(())
    }

    pub(crate) fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Runs one command and writes its artifacts, the effective config and a
/// manifest into `spec.output_dir`.
pub fn run(spec: &ExperimentSpec) -> Result<RunReport, HarnessError> {
    let cfg = ExperimentConfig::load(spec.config_path.as_deref(), &spec.overrides, spec.seed)?;
    let mut artifacts = Artifacts::new(&spec.output_dir)?;
    let canonical = cfg.canonical_toml()?;
    artifacts.text("config.toml", "config", canonical.as_bytes())?;
    let mut report = match spec.command {
        Command::SolveNe => pipeline::solve_ne_command(&cfg, &mut artifacts)?,
        Command::TrainMddr => pipeline::train_mddr_command(&cfg, &mut artifacts)?,
        Command::Benchmark => pipeline::benchmark_command(&cfg, spec.jobs.max(1), &mut artifacts)?,
        Command::Simulate => pipeline::simulate_command(&cfg, &mut artifacts)?,
        Command::VerifyAll => pipeline::verify_command(&cfg, &mut artifacts)?,
    };
    let files: Vec<_> = artifacts
        .files
        .iter()
        .map(|(name, kind)| {
            let columns = schema(kind).map(|s| s.columns.to_vec());
            json!({ "path": name, "schema": kind, "columns": columns })
        })
        .collect();
    let manifest = json!({
        "command": spec.command.name(),
        "seed": cfg.seed,
        "config_sha256": sha256_hex(canonical.as_bytes()),
        "versions": {
            "iomtrade": env!("CARGO_PKG_VERSION"),
            "manifest": 1,
        },
        "files": files,
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    artifacts.text("manifest.json", "manifest", text.as_bytes())?;
    report.files = artifacts.files.into_iter().map(|(n, _)| n).collect();
    Ok(report)
}
