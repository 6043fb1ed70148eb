use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::{Deserialize, Serialize};

/// Scalars collected over a pipeline run. A numeric field is either finite
/// or `null` with an entry in `null_reasons`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config: BTreeMap<String, serde_json::Value>,
    pub alpha_label: Option<f64>,
    pub alpha_residual: Option<f64>,
    pub c: Option<f64>,
    pub delta: Option<f64>,
    pub dominance: Option<f64>,
    pub q: Option<f64>,
    #[serde(rename = "C1")]
    pub c1: Option<f64>,
    #[serde(rename = "C2")]
    pub c2: Option<f64>,
    pub lambda_min: Option<f64>,
    pub lambda_max: Option<f64>,
    #[serde(rename = "trK")]
    pub tr_k: Option<f64>,
    #[serde(rename = "T_epsilon")]
    pub t_epsilon: Option<f64>,
    pub width_diag_log10: Option<f64>,
    pub coverage: Option<f64>,
    pub max_relative_deviation: Option<f64>,
    pub refined_over_classical: Option<f64>,
    pub diverged: bool,
    pub files: BTreeMap<String, PathBuf>,
    pub null_reasons: BTreeMap<String, String>,
}

pub const NUMERIC_FIELDS: [&str; 16] = [
    "alpha_label",
    "alpha_residual",
    "c",
    "delta",
    "dominance",
    "q",
    "C1",
    "C2",
    "lambda_min",
    "lambda_max",
    "trK",
    "T_epsilon",
    "width_diag_log10",
    "coverage",
    "max_relative_deviation",
    "refined_over_classical",
];

impl ExperimentReport {
    pub fn new(seed: Option<u64>) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            ..Self::default()
        }
    }

    fn slot(&mut self, field: &str) -> &mut Option<f64> {
        match field {
            "alpha_label" => &mut self.alpha_label,
            "alpha_residual" => &mut self.alpha_residual,
            "c" => &mut self.c,
            "delta" => &mut self.delta,
            "dominance" => &mut self.dominance,
            "q" => &mut self.q,
            "C1" => &mut self.c1,
            "C2" => &mut self.c2,
            "lambda_min" => &mut self.lambda_min,
            "lambda_max" => &mut self.lambda_max,
            "trK" => &mut self.tr_k,
            "T_epsilon" => &mut self.t_epsilon,
            "width_diag_log10" => &mut self.width_diag_log10,
            "coverage" => &mut self.coverage,
            "max_relative_deviation" => &mut self.max_relative_deviation,
            "refined_over_classical" => &mut self.refined_over_classical,
            other => panic!("unknown report field {other}"),
        }
    }

    /// Stores a finite value, or `null` with the given (or a non-finite)
    /// reason.
    pub fn set(&mut self, field: &str, value: std::result::Result<f64, String>) {
        let outcome = match value {
            Ok(v) if v.is_finite() => Ok(v),
            Ok(v) => Err(format!("non-finite value {v}")),
            Err(reason) => Err(reason),
        };
        match outcome {
            Ok(v) => {
                *self.slot(field) = Some(v);
                self.null_reasons.remove(field);
            }
            Err(reason) => {
                *self.slot(field) = None;
                self.null_reasons.insert(field.to_string(), reason);
            }
        }
    }

    pub fn get(&mut self, field: &str) -> Option<f64> {
        *self.slot(field)
    }

    /// Fields that are `null` without a recorded reason.
    pub fn unexplained_nulls(&mut self) -> Vec<&'static str> {
        NUMERIC_FIELDS
            .iter()
            .copied()
            .filter(|f| self.slot(f).is_none() && !self.null_reasons.contains_key(*f))
            .collect()
    }

    /// Fills every unset numeric field with a reason.
    pub fn explain_missing(&mut self, reason: &str) {
        for f in self.unexplained_nulls() {
            self.null_reasons.insert(f.to_string(), reason.to_string());
        }
    }

    pub fn config_value(&self, key: &str) -> Option<f64> {
        self.config.get(key).and_then(serde_json::Value::as_f64)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(ntkspectra::Error::MissingArtifact(path.to_path_buf()).into());
        }
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
