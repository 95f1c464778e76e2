//! Comparison tables: simulated observable against its reference value.

use std::fmt;

use serde::{Deserialize, Serialize};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// How a row is judged. Every threshold comes from the config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Check {
    /// `|value − reference| ≤ tol · |reference|`.
    Relative { tol: f64 },
    /// `|value − reference| ≤ tol`.
    Absolute { tol: f64 },
    /// `|value − reference| ≤ max · error`.
    Pull { max: f64 },
    /// `value ≤ limit`.
    AtMost { limit: f64 },
    /// `value ≥ limit`.
    AtLeast { limit: f64 },
    /// `value ≤ reference` (a reported bound) and `value ≤ target`.
    WithinBound { target: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub observable: String,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<f64>,
    pub reference: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_error: Option<f64>,
    /// `(value − reference) / error` when an error is known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pull: Option<f64>,
    pub check: Check,
    pub pass: bool,
    /// Where the simulated value comes from.
    pub source: String,
    /// Where the reference value comes from.
    pub reference_source: String,
}

impl Row {
    pub fn new(
        observable: impl Into<String>,
        (value, error): (f64, Option<f64>),
        reference: f64,
        check: Check,
        source: impl Into<String>,
        reference_source: impl Into<String>,
    ) -> Self {
        let error = error.filter(|e| e.is_finite());
        let pull = error.filter(|&e| e > 0.0).map(|e| (value - reference) / e);
        let diff = (value - reference).abs();
        let pass = match check {
            Check::Relative { tol } => diff <= tol * reference.abs(),
            Check::Absolute { tol } => diff <= tol,
            Check::Pull { max } => error.is_some_and(|e| diff <= max * e),
            Check::AtMost { limit } => value <= limit,
            Check::AtLeast { limit } => value >= limit,
            Check::WithinBound { target } => value <= reference && value <= target,
        };
        Self {
            observable: observable.into(),
            value,
            error,
            reference,
            reference_error: None,
            pull,
            check,
            pass: pass && value.is_finite(),
            source: source.into(),
            reference_source: reference_source.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema_version: u32,
    pub experiment: String,
    /// SHA-256 of the resolved config.
    pub config_hash: String,
    pub code_version: String,
    pub rows: Vec<Row>,
    pub warnings: Vec<String>,
    pub pass: bool,
}

impl ComparisonReport {
    pub fn new(experiment: &str, config_hash: String, rows: Vec<Row>, warnings: Vec<String>) -> Self {
        let pass = rows.iter().all(|r| r.pass);
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            experiment: experiment.to_string(),
            config_hash,
            code_version: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).to_string(),
            rows,
            warnings,
            pass,
        }
    }

    pub fn row(&self, observable: &str) -> Option<&Row> {
        self.rows.iter().find(|r| r.observable == observable)
    }
}

fn describe(check: &Check) -> String {
    match *check {
        Check::Relative { tol } => format!("rel ≤ {tol}"),
        Check::Absolute { tol } => format!("abs ≤ {tol}"),
        Check::Pull { max } => format!("|pull| ≤ {max}"),
        Check::AtMost { limit } => format!("≤ {limit}"),
        Check::AtLeast { limit } => format!("≥ {limit}"),
        Check::WithinBound { target } => format!("≤ bound, ≤ {target}"),
    }
}

impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "experiment {}  config {}  ({})", self.experiment, &self.config_hash[..12.min(self.config_hash.len())], self.code_version)?;
        writeln!(
            f,
            "{:<28} {:>14} {:>11} {:>14} {:>8}  {:<18} result",
            "observable", "value", "± error", "reference", "pull", "check"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<28} {:>14.6e} {:>11} {:>14.6e} {:>8}  {:<18} {}",
                r.observable,
                r.value,
                r.error.map_or("-".into(), |e| format!("{e:.2e}")),
                r.reference,
                r.pull.map_or("-".into(), |p| format!("{p:.2}")),
                describe(&r.check),
                if r.pass { "PASS" } else { "FAIL" }
            )?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        write!(f, "overall: {}", if self.pass { "PASS" } else { "FAIL" })
    }
}
