use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{PipelineError, RollbackRecord};
use crate::models::{mean, nearest_rank, EvalMetrics};
use crate::rollback;
use crate::types::{DeviceId, DeviceState};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// JSON schema every [`RunReport`] conforms to.
pub const REPORT_SCHEMA: &str = include_str!("../../schema/run_report.schema.json");

/// Mean and tail of a latency sample, in ms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub p95: f64,
    pub max: f64,
    pub samples: usize,
}

impl Stat {
    /// Fewer samples than this and no mean is reported.
    pub const MIN_SAMPLES: usize = 30;

    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.len() < Self::MIN_SAMPLES {
            return None;
        }
        let mut s = xs.to_vec();
        s.sort_by(f64::total_cmp);
        Some(Self {
            mean: mean(&s),
            p95: nearest_rank(&s, 95.0),
            max: *s.last().expect("non-empty"),
            samples: s.len(),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    /// Signature match plus model prediction, per event.
    pub inference_ms: Option<Stat>,
    /// Validation, plus rollback planning when anomalous, per interaction.
    pub validate_plan_ms: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceReport {
    pub peak_memory_mb: Option<f64>,
    pub mean_cpu_percent: Option<f64>,
    pub cpu_samples: usize,
    pub sample_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestoreSummary {
    pub device: DeviceId,
    pub state: DeviceState,
    pub source: String,
    pub outcome: rollback::Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollbackSummary {
    pub anomaly: String,
    pub isolate: DeviceId,
    pub restored: Vec<RestoreSummary>,
    pub all_restored: bool,
    pub cutoff: Option<f64>,
    pub elapsed_ms: f64,
}

impl From<&RollbackRecord> for RollbackSummary {
    fn from(r: &RollbackRecord) -> Self {
        Self {
            anomaly: r.plan.anomaly.to_string(),
            isolate: r.report.isolate.clone(),
            restored: r
                .report
                .entries
                .iter()
                .map(|e| RestoreSummary {
                    device: e.device_id.clone(),
                    state: e.state.clone(),
                    source: e.source.to_string(),
                    outcome: e.outcome.clone(),
                })
                .collect(),
            all_restored: r.report.all_restored(),
            cutoff: r.cutoff,
            elapsed_ms: r.report.elapsed_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub command: String,
    pub config_digest: String,
    pub metrics: Option<EvalMetrics>,
    pub timing: TimingReport,
    pub resources: Option<ResourceReport>,
    pub counts: BTreeMap<String, u64>,
    pub rollbacks: Vec<RollbackSummary>,
}

impl RunReport {
    pub fn new(command: &str, config_digest: String) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            command: command.to_string(),
            config_digest,
            metrics: None,
            timing: TimingReport::default(),
            resources: None,
            counts: BTreeMap::new(),
            rollbacks: Vec::new(),
        }
    }

    pub fn count(&mut self, name: &str, n: usize) -> &mut Self {
        self.counts.insert(name.to_string(), n as u64);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// The report without wall-clock and resource figures; equal across
    /// reruns on the same inputs.
    pub fn deterministic_view(&self) -> serde_json::Value {
        let mut r = self.clone();
        r.timing = TimingReport::default();
        r.resources = None;
        if let Some(m) = &mut r.metrics {
            m.mean_inference_ms = 0.0;
            m.p95_inference_ms = 0.0;
        }
        for rb in &mut r.rollbacks {
            rb.elapsed_ms = 0.0;
        }
        serde_json::to_value(r).expect("report serializes")
    }
}

/// Hash over a command's parameters and input files.
pub struct ConfigDigest(Sha256);

impl ConfigDigest {
    pub fn new(command: &str) -> Self {
        let mut h = Sha256::new();
        h.update(b"command=");
        h.update(command.as_bytes());
        h.update(b"\n");
        Self(h)
    }

    pub fn param(mut self, key: &str, value: impl Display) -> Self {
        self.0.update(format!("{key}={value}\n").as_bytes());
        self
    }

    pub fn bytes(mut self, key: &str, data: &[u8]) -> Self {
        self.0.update(format!("{key}:{}\n", data.len()).as_bytes());
        self.0.update(data);
        self
    }

    pub fn file(self, key: &str, path: &Path) -> Result<Self, PipelineError> {
        let data = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
        Ok(self.bytes(key, &data))
    }

    pub fn finish(self) -> String {
        format!("sha256:{}", hex::encode(self.0.finalize()))
    }
}
