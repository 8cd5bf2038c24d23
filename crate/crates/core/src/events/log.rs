use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EventError;
use crate::types::{DeviceId, DeviceState, NodeRef, Validation};

/// Matched event type, or a burst that matched no signature.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventType {
    Known(String),
    AnomalyCandidate,
}

impl EventType {
    pub const CANDIDATE: &'static str = "ANOMALY_CANDIDATE";

    pub fn known(name: impl Into<String>) -> Self {
        EventType::Known(name.into())
    }

    pub fn as_str(&self) -> &str {
        match self {
            EventType::Known(s) => s,
            EventType::AnomalyCandidate => Self::CANDIDATE,
        }
    }

    pub fn name(&self) -> Option<&str> {
        match self {
            EventType::Known(s) => Some(s),
            EventType::AnomalyCandidate => None,
        }
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for EventType {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for EventType {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(if s == Self::CANDIDATE {
            EventType::AnomalyCandidate
        } else {
            EventType::Known(s)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub device_id: DeviceId,
    pub event_type: EventType,
    /// Start of the burst that carried the event.
    pub ts: f64,
    /// Position of the burst in detection order, if the event came off the wire.
    pub burst: Option<usize>,
    key: Option<NodeRef>,
    pub verdict: Validation,
    /// Device state once the event took effect.
    pub state_after: Option<DeviceState>,
    /// Dropped by the packet-level detector before reaching any device.
    pub discarded: bool,
    /// Undone by a rollback; never a stable-state source afterwards.
    pub rolled_back: bool,
}

impl EventRecord {
    pub fn new(device_id: DeviceId, event_type: EventType, ts: f64) -> Self {
        Self {
            device_id,
            event_type,
            ts,
            burst: None,
            key: None,
            verdict: Validation::Pending,
            state_after: None,
            discarded: false,
            rolled_back: false,
        }
    }

    pub fn with_burst(mut self, idx: usize) -> Self {
        self.burst = Some(idx);
        self
    }

    pub fn with_state(mut self, state: DeviceState) -> Self {
        self.state_after = Some(state);
        self
    }

    pub fn key(&self) -> Option<&NodeRef> {
        self.key.as_ref()
    }

    pub fn to_line(&self) -> String {
        let key = self.key.as_ref().map_or_else(|| "unassigned".to_string(), |k| k.key.to_string());
        format!("key={key} device={} event={} ts={}", self.device_id, self.event_type, self.ts)
    }
}

/// Append-only chronological log of one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceLog {
    pub device_id: DeviceId,
    entries: Vec<EventRecord>,
}

impl DeviceLog {
    pub fn new(device_id: DeviceId) -> Self {
        Self {
            device_id,
            entries: Vec::new(),
        }
    }

    pub fn entries(&self) -> &[EventRecord] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&EventRecord> {
        self.entries.get(index)
    }

    /// Appends `ev` and returns its index.
    pub fn append(&mut self, ev: EventRecord) -> Result<usize, EventError> {
        if let Some(last) = self.entries.last() {
            if ev.ts < last.ts {
                return Err(EventError::OutOfOrder {
                    device: self.device_id.to_string(),
                    ts: ev.ts,
                    last: last.ts,
                });
            }
        }
        self.entries.push(ev);
        Ok(self.entries.len() - 1)
    }

    pub fn assign_key(&mut self, index: usize, key: NodeRef) -> Result<(), EventError> {
        let entry = &mut self.entries[index];
        if let Some(existing) = &entry.key {
            return Err(EventError::KeyAlreadyAssigned {
                device: self.device_id.to_string(),
                index,
                existing: existing.to_string(),
            });
        }
        entry.key = Some(key);
        Ok(())
    }

    pub fn position_of(&self, key: &NodeRef) -> Option<usize> {
        self.entries.iter().rposition(|e| e.key.as_ref() == Some(key))
    }

    pub fn set_verdict(&mut self, index: usize, verdict: Validation) {
        self.entries[index].verdict = verdict;
    }

    pub fn set_state_after(&mut self, index: usize, state: DeviceState) {
        self.entries[index].state_after = Some(state);
    }

    pub fn mark_discarded(&mut self, index: usize) {
        self.entries[index].discarded = true;
    }

    pub fn mark_rolled_back(&mut self, index: usize) {
        self.entries[index].rolled_back = true;
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(out, "{}", e.to_line());
        }
        out
    }
}

/// All device logs, keyed by device.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLogs {
    logs: BTreeMap<DeviceId, DeviceLog>,
}

impl EventLogs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, device: &DeviceId) -> Option<&DeviceLog> {
        self.logs.get(device)
    }

    pub fn get_mut(&mut self, device: &DeviceId) -> Option<&mut DeviceLog> {
        self.logs.get_mut(device)
    }

    pub fn log_mut(&mut self, device: &DeviceId) -> &mut DeviceLog {
        self.logs
            .entry(device.clone())
            .or_insert_with(|| DeviceLog::new(device.clone()))
    }

    pub fn append(&mut self, ev: EventRecord) -> Result<usize, EventError> {
        let dev = ev.device_id.clone();
        self.log_mut(&dev).append(ev)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&DeviceId, &DeviceLog)> {
        self.logs.iter()
    }

    pub fn total_len(&self) -> usize {
        self.logs.values().map(DeviceLog::len).sum()
    }

    /// Writes one `<device>.log` file per device into `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<(), EventError> {
        let dir = dir.as_ref();
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| EventError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        for (dev, log) in &self.logs {
            let path = dir.join(format!("{dev}.log"));
            std::fs::write(&path, log.render()).map_err(io(&path))?;
        }
        Ok(())
    }
}
