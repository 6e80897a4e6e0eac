//! Experiment reports: JSON with a content hash, and CSV curves.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::probes::{GradientVarianceProbe, VarianceProbe};
use super::train::EpochRecord;
use crate::error::Result;

/// One row of a result table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: String,
    pub metric: String,
    pub value: f64,
    /// Standard error; 0 for exact quantities.
    pub se: f64,
    pub reference: Option<f64>,
    pub pass: Option<bool>,
    /// Rows expected to fail (negative controls) do not fail a suite.
    #[serde(default)]
    pub expected_fail: bool,
    #[serde(default)]
    pub note: String,
}

impl MetricRow {
    pub fn new(method: &str, metric: &str, value: f64, se: f64) -> Self {
        MetricRow {
            method: method.into(),
            metric: metric.into(),
            value,
            se,
            reference: None,
            pass: None,
            expected_fail: false,
            note: String::new(),
        }
    }

    pub fn reference(mut self, r: f64) -> Self {
        self.reference = Some(r);
        self
    }

    pub fn check(mut self, ok: bool) -> Self {
        self.pass = Some(ok);
        self
    }

    pub fn note(mut self, s: &str) -> Self {
        self.note = s.into();
        self
    }

    pub fn expected_fail(mut self) -> Self {
        self.expected_fail = true;
        self
    }

    /// Whether the row counts against its suite.
    pub fn failed(&self) -> bool {
        self.pass == Some(false) && !self.expected_fail
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: String,
    pub seed: u64,
    pub config_hash: String,
    pub loss: String,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub final_val_loss: f64,
    pub test_mse: Option<f64>,
    pub test_mse_se: Option<f64>,
    pub mmse: Option<f64>,
    pub multipliers: Vec<f64>,
    pub variance: Option<VarianceProbe>,
    pub gradient_variance: Option<GradientVarianceProbe>,
    pub rows: Vec<MetricRow>,
    /// Wall-clock creation time; not part of the hash.
    pub timestamp: String,
}

impl ExperimentReport {
    /// Deterministic pretty JSON.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Epoch curve as CSV.
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,oracle_mse\n");
        for r in &self.epochs {
            let o = r.oracle_mse.map(|v| format!("{v:.17e}")).unwrap_or_default();
            s.push_str(&format!("{},{:.17e},{:.17e},{}\n", r.epoch, r.train_loss, r.val_loss, o));
        }
        s
    }
}

/// Hex SHA-256 of canonical bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Seconds since the Unix epoch, as text.
pub fn timestamp_now() -> String {
    let d = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).unwrap_or_default();
    format!("{}", d.as_secs())
}
