//! Deterministic smart-home simulator.
//!
//! A scenario lists devices with their traffic profiles, automation rules and
//! injected anomalies. [`run_scenario`] plays it on a virtual clock and
//! returns the packet trace, an event ledger and the ground truth. Interaction
//! trees are emitted one at a time: a root reading, then every rule firing in
//! breadth-first order, one exchange per event.

mod config;
mod engine;
mod label;
pub mod presets;

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

pub use config::{
    AnomalyKind, DeviceSpec, Effect, Emission, EventProfile, InjectedAnomaly, Initiator, Profile, ScenarioConfig,
    Timing, Transport, ValueDist, MAX_DELAY_TICKS, SCHEMA_VERSION,
};
pub use engine::{run_scenario, ClassCounts, GroundTruth, InjectionOutcome, LedgerEntry, SimOutput};
pub use label::{join_bursts, label_dataset, named_bursts};

use crate::trace::write_jsonl_string;

pub const TRACE_FILE: &str = "trace.jsonl";
pub const LEDGER_FILE: &str = "ledger.jsonl";
pub const TRUTH_FILE: &str = "truth.json";
pub const REGISTRY_FILE: &str = "registry.json";
pub const RULES_FILE: &str = "rules.json";

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid scenario at `{path}`: {reason}")]
    InvalidConfig { path: String, reason: String },
    #[error("burst of {device} at {ts}s is equally close to two ledger events")]
    JoinAmbiguous { device: String, ts: f64 },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SimError {
    pub fn code(&self) -> &'static str {
        match self {
            SimError::InvalidConfig { .. } => "INVALID_CONFIG",
            SimError::JoinAmbiguous { .. } => "JOIN_AMBIGUOUS",
            SimError::Format { .. } => "LEDGER_FORMAT",
            SimError::Io { .. } => "IO",
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl SimOutput {
    pub fn trace_jsonl(&self) -> String {
        write_jsonl_string(&self.records)
    }

    pub fn ledger_jsonl(&self) -> String {
        let mut s = String::with_capacity(self.ledger.len() * 160);
        for e in &self.ledger {
            s.push_str(&serde_json::to_string(e).expect("ledger serializes"));
            s.push('\n');
        }
        s
    }

    pub fn truth_json(&self) -> String {
        serde_json::to_string_pretty(&self.truth).expect("truth serializes")
    }

    /// Writes trace, ledger and truth, plus the registry and rules files the
    /// controller commands take.
    pub fn write_dir(&self, cfg: &ScenarioConfig, dir: impl AsRef<Path>) -> Result<(), SimError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
        let files = [
            (TRACE_FILE, self.trace_jsonl()),
            (LEDGER_FILE, self.ledger_jsonl()),
            (TRUTH_FILE, self.truth_json()),
            (REGISTRY_FILE, cfg.registry().to_definition_json()),
            (RULES_FILE, cfg.rule_set().to_json()),
        ];
        for (name, body) in files {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| SimError::io(&p, e))?;
        }
        Ok(())
    }
}

pub fn read_ledger(path: impl AsRef<Path>) -> Result<Vec<LedgerEntry>, SimError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| SimError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| SimError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let e = serde_json::from_str(&line).map_err(|e| SimError::Format {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", i + 1),
        })?;
        out.push(e);
    }
    Ok(out)
}

pub fn read_truth(path: impl AsRef<Path>) -> Result<GroundTruth, SimError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| SimError::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}
