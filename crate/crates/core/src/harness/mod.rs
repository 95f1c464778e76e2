//! Experiment orchestration: config in, run directory with report out.

pub mod config;
pub mod constants;
pub mod pipelines;
pub mod plot;
pub mod report;

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use config::ExperimentConfig;
use report::ComparisonReport;

/// Environment variable overriding the directory run outputs are placed under.
pub const OUTPUT_ROOT_ENV: &str = "SEDKIT_OUTPUT_ROOT";

#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub report: ComparisonReport,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Output root: the argument, else `$SEDKIT_OUTPUT_ROOT`, else the working directory.
pub fn output_root(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Loads, validates and runs the config at `path`. Nothing is written
/// unless validation succeeds.
pub fn run_experiment(path: &Path, root: Option<&Path>) -> Result<RunOutcome> {
    let (cfg, original) = ExperimentConfig::load(path)?;
    run_config(&cfg, Some(&original), root)
}

pub fn run_config(cfg: &ExperimentConfig, original: Option<&str>, root: Option<&Path>) -> Result<RunOutcome> {
    pipelines::validate(cfg)?;
    let resolved = cfg.to_toml()?;
    let hash = sha256_hex(resolved.as_bytes());
    let dir = output_root(root).join(&cfg.outputs.directory);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join(pipelines::names::CONFIG), &resolved)?;
    if let Some(text) = original {
        std::fs::write(dir.join(pipelines::names::CONFIG_ORIGINAL), text)?;
    }
    let out = pipelines::run(cfg, &dir)?;
    let report = ComparisonReport::new(&cfg.experiment, hash, out.rows, out.warnings);
    write_report(&dir, &report)?;
    Ok(RunOutcome { dir, report })
}

pub fn write_report(dir: &Path, report: &ComparisonReport) -> Result<()> {
    pipelines::write_json(dir, pipelines::names::REPORT, report)?;
    std::fs::write(dir.join(pipelines::names::REPORT_TEXT), format!("{report}\n"))?;
    Ok(())
}

/// Reads the report of a finished run.
pub fn load_report(dir: &Path) -> Result<ComparisonReport> {
    let path = dir.join(pipelines::names::REPORT);
    if !path.exists() {
        return Err(Error::MissingArtifact {
            dir: dir.to_path_buf(),
            names: vec![pipelines::names::REPORT.to_string()],
        });
    }
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}
