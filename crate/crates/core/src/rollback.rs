//! Restoring devices hit by a propagated interaction anomaly.
//!
//! A plan lists every device in the anomalous subtree together with the
//! state it held after its most recent validated event outside that subtree
//! (or its registration state), deepest event first. Executing the plan
//! drives an [`Actuator`], updates the registry and isolates the device that
//! produced the anomalous event.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::events::{DeviceLog, EventLogs};
use crate::interaction::{InteractionError, InteractionTree, Registry};
use crate::types::{DeviceId, DeviceState, EventKey, NodeRef, Validation};

#[derive(Debug, thiserror::Error)]
pub enum RollbackError {
    #[error("node {0} is not anomalous")]
    NodeNotAnomalous(String),
    #[error("malformed rollback plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Interaction(#[from] InteractionError),
}

impl RollbackError {
    pub fn code(&self) -> &'static str {
        match self {
            RollbackError::NodeNotAnomalous(_) => "NODE_NOT_ANOMALOUS",
            RollbackError::InvalidPlan(_) => "INVALID_PLAN",
            RollbackError::Interaction(e) => e.code(),
        }
    }
}

/// Where a restore target came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StateSource {
    Initial,
    Event(NodeRef),
}

impl fmt::Display for StateSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateSource::Initial => f.write_str("INITIAL"),
            StateSource::Event(r) => write!(f, "{r}"),
        }
    }
}

impl Serialize for StateSource {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StateSource {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s == "INITIAL" {
            return Ok(StateSource::Initial);
        }
        let (root, key) = s
            .rsplit_once('/')
            .ok_or_else(|| serde::de::Error::custom(format!("bad state source {s:?}")))?;
        let key: EventKey = key.parse().map_err(serde::de::Error::custom)?;
        Ok(StateSource::Event(NodeRef::new(DeviceId::from(root), key)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StableStateEntry {
    pub device_id: DeviceId,
    pub state: DeviceState,
    pub source: StateSource,
    pub ts: f64,
}

/// Latest state of `device` set by a VALID event that is not excluded,
/// discarded or already rolled back; the registration state otherwise.
pub fn last_stable_state(
    log: Option<&DeviceLog>,
    registry: &Registry,
    device: &DeviceId,
    exclude: &HashSet<NodeRef>,
) -> Result<StableStateEntry, RollbackError> {
    let rec = registry.require(device)?;
    let found = log.into_iter().flat_map(|l| l.entries().iter().rev()).find_map(|e| {
        let key = e.key()?;
        let state = e.state_after.as_ref()?;
        let usable = e.verdict == Validation::Valid && !e.discarded && !e.rolled_back && !exclude.contains(key);
        usable.then(|| StableStateEntry {
            device_id: device.clone(),
            state: state.clone(),
            source: StateSource::Event(key.clone()),
            ts: e.ts,
        })
    });
    Ok(found.unwrap_or_else(|| StableStateEntry {
        device_id: device.clone(),
        state: rec.initial_state.clone(),
        source: StateSource::Initial,
        ts: 0.0,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollbackPlan {
    pub anomaly: NodeRef,
    /// One entry per affected device, deepest event first.
    pub entries: Vec<StableStateEntry>,
    pub isolate: DeviceId,
    /// Every event of the anomalous subtree.
    pub subtree: Vec<NodeRef>,
}

impl RollbackPlan {
    pub fn validate(&self) -> Result<(), RollbackError> {
        if self.entries.is_empty() {
            return Err(RollbackError::InvalidPlan("no entries".into()));
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(&e.device_id) {
                return Err(RollbackError::InvalidPlan(format!("device {} listed twice", e.device_id)));
            }
        }
        if !seen.contains(&self.isolate) {
            return Err(RollbackError::InvalidPlan(format!(
                "originator {} is not among the entries",
                self.isolate
            )));
        }
        Ok(())
    }
}

pub fn plan_rollback(
    tree: &InteractionTree,
    anomaly_key: &EventKey,
    logs: &EventLogs,
    registry: &Registry,
) -> Result<RollbackPlan, RollbackError> {
    let node = tree.require(anomaly_key)?;
    if node.validation != Validation::Anomalous {
        return Err(RollbackError::NodeNotAnomalous(anomaly_key.to_string()));
    }
    let affected = tree.affected_set(anomaly_key)?;
    let subtree: Vec<NodeRef> = affected.iter().map(|(k, _)| tree.node_ref(*k)).collect();
    let exclude: HashSet<NodeRef> = subtree.iter().cloned().collect();

    // a device hit more than once keeps its shallowest slot, so it is never
    // restored ahead of a descendant
    let mut last: HashMap<&DeviceId, usize> = HashMap::new();
    for (i, (_, d)) in affected.iter().enumerate() {
        last.insert(d, i);
    }
    let mut entries = Vec::new();
    for (i, (_, d)) in affected.iter().enumerate() {
        if last[d] == i {
            entries.push(last_stable_state(logs.get(d), registry, d, &exclude)?);
        }
    }
    Ok(RollbackPlan {
        anomaly: tree.node_ref(*anomaly_key),
        entries,
        isolate: node.device_id.clone(),
        subtree,
    })
}

/// Sends restore commands to devices.
pub trait Actuator {
    fn set_state(&mut self, device: &DeviceId, state: &DeviceState) -> Result<(), String>;
}

/// Records commands without touching any device; used for replayed traces.
#[derive(Debug, Clone, Default)]
pub struct LoggingActuator {
    pub commands: Vec<(DeviceId, DeviceState)>,
}

impl Actuator for LoggingActuator {
    fn set_state(&mut self, device: &DeviceId, state: &DeviceState) -> Result<(), String> {
        self.commands.push((device.clone(), state.clone()));
        Ok(())
    }
}

/// Fails every command addressed to one of `failing`.
#[derive(Debug, Clone, Default)]
pub struct FailingActuator {
    pub failing: HashSet<DeviceId>,
    pub inner: LoggingActuator,
}

impl Actuator for FailingActuator {
    fn set_state(&mut self, device: &DeviceId, state: &DeviceState) -> Result<(), String> {
        if self.failing.contains(device) {
            return Err(format!("device {device} did not acknowledge"));
        }
        self.inner.set_state(device, state)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Restored,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryReport {
    pub device_id: DeviceId,
    pub state: DeviceState,
    pub source: StateSource,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollbackReport {
    pub anomaly_key: EventKey,
    pub root_device: DeviceId,
    pub isolate: DeviceId,
    pub entries: Vec<EntryReport>,
    pub elapsed_ms: f64,
}

impl RollbackReport {
    pub fn all_restored(&self) -> bool {
        self.entries.iter().all(|e| e.outcome == Outcome::Restored)
    }
}

/// Applies `plan` in order. A failed entry is reported and the remaining
/// entries still run; the originator is isolated either way. Events of the
/// subtree are marked rolled back in `logs`.
pub fn execute_rollback(
    plan: &RollbackPlan,
    actuator: &mut dyn Actuator,
    registry: &mut Registry,
    logs: &mut EventLogs,
) -> Result<RollbackReport, RollbackError> {
    plan.validate()?;
    let start = Instant::now();
    let mut entries = Vec::with_capacity(plan.entries.len());
    for e in &plan.entries {
        let (outcome, reason) = match actuator.set_state(&e.device_id, &e.state) {
            Ok(()) => {
                registry.set_state(&e.device_id, e.state.clone())?;
                (Outcome::Restored, None)
            }
            Err(r) => (Outcome::Failed, Some(r)),
        };
        entries.push(EntryReport {
            device_id: e.device_id.clone(),
            state: e.state.clone(),
            source: e.source.clone(),
            outcome,
            reason,
        });
    }
    registry.isolate(&plan.isolate)?;
    let subtree: HashSet<&NodeRef> = plan.subtree.iter().collect();
    let devices: HashSet<&DeviceId> = plan.entries.iter().map(|e| &e.device_id).collect();
    for d in devices {
        if let Some(log) = logs.get_mut(d) {
            let hits: Vec<usize> = log
                .entries()
                .iter()
                .enumerate()
                .filter(|(_, e)| e.key().is_some_and(|k| subtree.contains(k)))
                .map(|(i, _)| i)
                .collect();
            for i in hits {
                log.mark_rolled_back(i);
            }
        }
    }
    Ok(RollbackReport {
        anomaly_key: plan.anomaly.key,
        root_device: plan.anomaly.root.clone(),
        isolate: plan.isolate.clone(),
        entries,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}
