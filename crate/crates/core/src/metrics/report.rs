//! Evaluation report persistence: metric values, warnings, the resolved
//! config echo, and content fingerprints of every input artifact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::metrics::MetricValue;

pub const REPORT_FORMAT: &str = "cogeval/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl From<MetricValue> for MetricEntry {
    fn from(v: MetricValue) -> MetricEntry {
        MetricEntry { value: v.value, warning: v.warning }
    }
}

impl From<f64> for MetricEntry {
    fn from(value: f64) -> MetricEntry {
        MetricEntry { value, warning: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    /// Resolved run configuration, echoed verbatim.
    pub config: serde_json::Value,
    /// sha256 of every input artifact, keyed by role (manifest,
    /// embedder checkpoint, ...).
    pub fingerprints: BTreeMap<String, String>,
    pub metrics: BTreeMap<String, MetricEntry>,
    /// Free-form notices, e.g. skipped metrics and why.
    pub notes: Vec<String>,
}

impl EvalReport {
    pub fn new(config: serde_json::Value) -> EvalReport {
        EvalReport {
            format: REPORT_FORMAT.to_string(),
            config,
            fingerprints: BTreeMap::new(),
            metrics: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    pub fn insert(&mut self, name: &str, entry: impl Into<MetricEntry>) {
        self.metrics.insert(name.to_string(), entry.into());
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| CoreError::validation(format!("report serialization failed: {e}")))?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<EvalReport> {
        let text = fs::read_to_string(path)?;
        let report: EvalReport = serde_json::from_str(&text)
            .map_err(|e| CoreError::parse(0, format!("{}: {e}", path.display())))?;
        if report.format != REPORT_FORMAT {
            return Err(CoreError::Incompatible(format!(
                "report format {} (expected {REPORT_FORMAT})",
                report.format
            )));
        }
        Ok(report)
    }
}
