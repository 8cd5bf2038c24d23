//! Controller runs over recorded traces: detection, replay with rollback,
//! benchmarking, and the reports they produce.

mod controller;
mod report;
pub mod resources;

use std::path::{Path, PathBuf};
use std::time::Instant;

pub use controller::{BurstVerdict, Controller, ControllerParams, FeedEntry, Outcome, RollbackRecord, StatusFeed};
pub use report::{
    ConfigDigest, ResourceReport, RestoreSummary, RollbackSummary, RunReport, Stat, TimingReport, REPORT_SCHEMA,
    REPORT_SCHEMA_VERSION,
};

use crate::events::{featurize, Burst, EventError, EventLogs, EventRecord, EventType, SignatureSet};
use crate::interaction::{InteractionError, Registry, RuleSet};
use crate::models::{Model, ModelError};
use crate::rollback::RollbackError;
use crate::sim::SimError;
use crate::trace::{read_jsonl, read_pcap, Trace, TraceError, TraceMeta};
use crate::types::Label;

/// Fewest events a benchmark run accepts.
pub const MIN_BENCH_EVENTS: usize = 1_000;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Events(#[from] EventError),
    #[error(transparent)]
    Models(#[from] ModelError),
    #[error(transparent)]
    Interaction(#[from] InteractionError),
    #[error(transparent)]
    Rollback(#[from] RollbackError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("benchmark needs at least {need} events, trace has {got}")]
    InsufficientEvents { need: usize, got: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.into(),
            source,
        }
    }

    fn parts(&self) -> (&'static str, &'static str) {
        match self {
            PipelineError::Trace(e) => ("trace", e.code()),
            PipelineError::Events(e) => ("events", e.code()),
            PipelineError::Models(e) => ("models", e.code()),
            PipelineError::Interaction(e) => ("interaction", e.code()),
            PipelineError::Rollback(e) => ("rollback", e.code()),
            PipelineError::Sim(e) => ("sim", e.code()),
            PipelineError::InsufficientEvents { .. } => ("bench", "INSUFFICIENT_EVENTS"),
            PipelineError::Io { .. } => ("io", "IO"),
        }
    }

    /// Module-qualified code, e.g. `models.DIMENSION_MISMATCH`.
    pub fn code(&self) -> String {
        let (m, c) = self.parts();
        format!("{m}.{c}")
    }

    /// Process exit status for this error class.
    pub fn exit_code(&self) -> i32 {
        let (m, c) = self.parts();
        match (m, c) {
            (_, "IO") => 3,
            ("sim", "INVALID_CONFIG")
            | ("models", "INVALID_PARAM" | "MODEL_KIND_UNKNOWN")
            | (
                "interaction",
                "DUPLICATE_ID" | "DUPLICATE_ADDR" | "RULE_SELF_LOOP" | "RULE_INVALID" | "REGISTRY_FORMAT",
            ) => 4,
            ("trace" | "events", _) | ("sim", _) => 5,
            ("models", _) => 6,
            ("bench", _) => 7,
            _ => 8,
        }
    }
}

/// Address plan implied by the registry.
pub fn trace_meta(registry: &Registry, controller: std::net::Ipv4Addr) -> Result<TraceMeta, PipelineError> {
    let map = registry.iter().map(|d| (d.addr, d.device_id.clone())).collect();
    Ok(TraceMeta::new(controller, map)?)
}

/// Reads a `.pcap` capture or a JSONL trace, chosen by extension.
pub fn load_trace(path: &Path, meta: &TraceMeta) -> Result<Trace, PipelineError> {
    let pcap = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pcap"));
    Ok(if pcap { read_pcap(path, meta)? } else { read_jsonl(path, meta)? })
}

/// Packet-level verdicts of a trace, without tree building.
#[derive(Debug, Clone)]
pub struct Detection {
    pub labels: Vec<Label>,
    pub events: Vec<Option<String>>,
    /// Every burst as a logged event; anomalous ones are marked discarded.
    pub logs: EventLogs,
    pub inference_ms: Vec<f64>,
}

impl Detection {
    pub fn anomalies(&self) -> usize {
        self.labels.iter().filter(|l| l.is_anomalous()).count()
    }
}

pub fn detect(bursts: &[Burst], signatures: &SignatureSet, model: &Model) -> Result<Detection, PipelineError> {
    if model.dimension() != signatures.dimension() && !signatures.is_empty() {
        return Err(ModelError::DimensionMismatch {
            expected: signatures.dimension(),
            got: model.dimension(),
        }
        .into());
    }
    let mut out = Detection {
        labels: Vec::with_capacity(bursts.len()),
        events: Vec::with_capacity(bursts.len()),
        logs: EventLogs::new(),
        inference_ms: Vec::with_capacity(bursts.len()),
    };
    for (i, b) in bursts.iter().enumerate() {
        let start = Instant::now();
        let fv = featurize(b);
        let sig = signatures.match_features(&fv, &b.device_id);
        let label = model.predict(&fv);
        out.inference_ms.push(start.elapsed().as_secs_f64() * 1e3);
        let event = sig.map(|s| s.event_type.clone());
        let ty = event.clone().map_or(EventType::AnomalyCandidate, EventType::Known);
        let idx = out.logs.append(EventRecord::new(b.device_id.clone(), ty, b.start_ts).with_burst(i))?;
        if label.is_anomalous() {
            out.logs.log_mut(&b.device_id).mark_discarded(idx);
        }
        out.labels.push(label);
        out.events.push(event);
    }
    Ok(out)
}

/// Inputs of a full controller run.
pub struct ReplayInputs<'a> {
    pub bursts: &'a [Burst],
    pub registry: Registry,
    pub rules: &'a RuleSet,
    pub signatures: &'a SignatureSet,
    pub model: Option<&'a Model>,
    pub feed: Option<&'a StatusFeed>,
    pub params: ControllerParams,
}

pub fn replay(inputs: ReplayInputs<'_>) -> Result<Controller<'_>, PipelineError> {
    if let Some(m) = inputs.model {
        if !inputs.signatures.is_empty() && m.dimension() != inputs.signatures.dimension() {
            return Err(ModelError::DimensionMismatch {
                expected: inputs.signatures.dimension(),
                got: m.dimension(),
            }
            .into());
        }
    }
    let mut c = Controller::new(
        inputs.registry,
        inputs.rules,
        inputs.signatures,
        inputs.model,
        inputs.feed,
        inputs.params,
    );
    c.run(inputs.bursts)?;
    Ok(c)
}

/// Replay with resource sampling; needs at least [`MIN_BENCH_EVENTS`] bursts.
pub fn bench(inputs: ReplayInputs<'_>) -> Result<(Controller<'_>, ResourceReport), PipelineError> {
    if inputs.bursts.len() < MIN_BENCH_EVENTS {
        return Err(PipelineError::InsufficientEvents {
            need: MIN_BENCH_EVENTS,
            got: inputs.bursts.len(),
        });
    }
    let sampler = resources::CpuSampler::start(resources::SAMPLE_HZ);
    let run = replay(inputs);
    let cpu = sampler.stop();
    let c = run?;
    let res = ResourceReport {
        peak_memory_mb: resources::peak_memory_mb(),
        mean_cpu_percent: cpu.mean_percent,
        cpu_samples: cpu.samples,
        sample_hz: resources::SAMPLE_HZ,
    };
    Ok((c, res))
}

#[cfg(test)]
mod tests;
