//! Declarative experiment configuration (TOML).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{InitialCondition, ParticleSpec, TimeGrid};
use crate::error::{Error, Result};
use crate::field::FieldSpec;
use crate::kinematics::CoarseGrainSpec;
use crate::oracle::OuSpec;
use crate::schrodinger::{GridSpec, QuantumUnits};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Name of a registered pipeline.
    pub experiment: String,
    pub seeds: Seeds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<FieldSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub particle: Option<ParticleSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<TimeGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<AnalysisSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coarse_grain: Option<CoarseGrainSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ou: Option<OuSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schrodinger: Option<SchrodingerSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field_check: Option<FieldCheckSection>,
    /// Pass/fail thresholds, one per report row.
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    pub outputs: Outputs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub master_seed: u64,
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub n_traj: usize,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
    /// Worker threads; 0 uses all cores.
    #[serde(default)]
    pub threads: usize,
    /// Ignored by the OU oracle, which starts from its stationary law.
    #[serde(default = "InitialCondition::cold")]
    pub initial: InitialCondition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    /// Stationary window for energy, variance and balance.
    pub window: (f64, f64),
    /// Bins for the one-point normality test.
    #[serde(default = "default_normality_bins")]
    pub normality_bins: usize,
}

fn default_normality_bins() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Smallest and largest lag, in recorded steps.
    pub min_lag: usize,
    pub max_lag: usize,
    pub n_lags: usize,
    /// Separate finely recorded ensemble for the sweep. Only the OU oracle
    /// uses it; other pipelines sweep their main ensemble.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<TimeGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_traj: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchrodingerSection {
    #[serde(default)]
    pub units: QuantumUnits,
    pub omega: f64,
    /// Grid for eigenpairs and evolution.
    pub grid: GridSpec,
    pub n_states: usize,
    pub evolution_dt: f64,
    pub evolution_steps: usize,
    /// Grid for the hydrodynamic residuals.
    pub hydro_grid: GridSpec,
    /// Initial displacement of the coherent state.
    pub coherent_shift: f64,
    pub sample_times: Vec<f64>,
    pub ring_grid: GridSpec,
    pub ring_winding: i32,
    /// Half-width of the region compared under grid halving.
    pub convergence_extent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldCheckSection {
    pub n_realizations: usize,
    pub t_ref: f64,
    pub lags: Vec<f64>,
    pub stationarity_lag: f64,
    pub offsets: Vec<f64>,
    #[serde(default = "default_normality_bins")]
    pub normality_bins: usize,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    /// Run directory, relative to the output root.
    pub directory: String,
    #[serde(default = "default_true")]
    pub ensemble_binary: bool,
    #[serde(default)]
    pub ensemble_csv: bool,
    #[serde(default)]
    pub field_csv: bool,
}

impl ExperimentConfig {
    /// Parses TOML; syntax and schema errors carry line and column.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {CONFIG_SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        if cfg.seeds.master_seed > i64::MAX as u64 {
            return Err(Error::Config("seeds.master_seed must fit in a signed 64-bit integer".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Ok((Self::from_toml(&text)?, text))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Threshold `tolerances.<name>`.
    pub fn tolerance(&self, name: &str) -> Result<f64> {
        self.tolerances
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing key `tolerances.{name}` required by pipeline `{}`", self.experiment)))
    }
}

/// `section.as_ref()` or a config error naming the missing key.
pub fn require<'a, T>(section: &'a Option<T>, key: &str, pipeline: &str) -> Result<&'a T> {
    section
        .as_ref()
        .ok_or_else(|| Error::Config(format!("missing key `{key}` required by pipeline `{pipeline}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
experiment = "field_synthesis"

[seeds]
master_seed = 7

[outputs]
directory = "runs/x"
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert!(cfg.outputs.ensemble_binary);
        assert!(cfg.field.is_none());
    }

    #[test]
    fn unknown_keys_are_errors() {
        let text = MINIMAL.replace("master_seed = 7", "master_seed = 7\nmaster_sed = 8");
        let err = ExperimentConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("master_sed"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let text = MINIMAL.replace("schema_version = 1", "schema_version = 2");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn missing_tolerance_names_the_key() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let err = cfg.tolerance("energy_rel").unwrap_err().to_string();
        assert!(err.contains("tolerances.energy_rel"));
    }
}
