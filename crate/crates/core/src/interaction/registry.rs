use std::collections::{BTreeMap, HashMap};
use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{InteractionError, StateView};
use crate::types::{DeviceId, DeviceState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DeviceStatus {
    Active,
    Isolated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceRecord {
    #[serde(rename = "id")]
    pub device_id: DeviceId,
    #[serde(rename = "type")]
    pub device_type: String,
    pub addr: Ipv4Addr,
    pub state: DeviceState,
    /// State at registration; the fallback rollback target.
    pub initial_state: DeviceState,
    pub status: DeviceStatus,
    /// X of the next tree rooted at this device.
    pub reading_seq: u64,
}

impl DeviceRecord {
    pub fn new(device_id: impl Into<DeviceId>, device_type: &str, addr: Ipv4Addr, state: DeviceState) -> Self {
        Self {
            device_id: device_id.into(),
            device_type: device_type.to_string(),
            addr,
            initial_state: state.clone(),
            state,
            status: DeviceStatus::Active,
            reading_seq: 1,
        }
    }

    pub fn is_active(&self) -> bool {
        self.status == DeviceStatus::Active
    }
}

/// Devices known to the controller, with their current states.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Registry {
    devices: BTreeMap<DeviceId, DeviceRecord>,
    by_addr: HashMap<Ipv4Addr, DeviceId>,
}

#[derive(Serialize, Deserialize)]
struct RegistryFile {
    devices: Vec<RegistryEntry>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AnyRegistryFile {
    Dump { devices: Vec<DeviceRecord> },
    Definition(RegistryFile),
}

#[derive(Serialize, Deserialize)]
struct RegistryEntry {
    id: DeviceId,
    #[serde(rename = "type")]
    device_type: String,
    addr: Ipv4Addr,
    #[serde(alias = "state")]
    initial_state: DeviceState,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `record` as ACTIVE with its current state as the initial
    /// state and X counter 1.
    pub fn register_device(&mut self, mut record: DeviceRecord) -> Result<(), InteractionError> {
        if self.devices.contains_key(&record.device_id) {
            return Err(InteractionError::DuplicateId(record.device_id.to_string()));
        }
        if let Some(other) = self.by_addr.get(&record.addr) {
            return Err(InteractionError::DuplicateAddr {
                addr: record.addr,
                existing: other.to_string(),
            });
        }
        record.status = DeviceStatus::Active;
        record.reading_seq = 1;
        record.initial_state = record.state.clone();
        self.by_addr.insert(record.addr, record.device_id.clone());
        self.devices.insert(record.device_id.clone(), record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn get(&self, id: &DeviceId) -> Option<&DeviceRecord> {
        self.devices.get(id)
    }

    pub fn require(&self, id: &DeviceId) -> Result<&DeviceRecord, InteractionError> {
        self.devices
            .get(id)
            .ok_or_else(|| InteractionError::UnknownDevice(id.to_string()))
    }

    pub(crate) fn require_mut(&mut self, id: &DeviceId) -> Result<&mut DeviceRecord, InteractionError> {
        self.devices
            .get_mut(id)
            .ok_or_else(|| InteractionError::UnknownDevice(id.to_string()))
    }

    pub fn by_addr(&self, addr: Ipv4Addr) -> Option<&DeviceRecord> {
        self.by_addr.get(&addr).and_then(|id| self.devices.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &DeviceRecord> {
        self.devices.values()
    }

    pub fn set_state(&mut self, id: &DeviceId, state: DeviceState) -> Result<(), InteractionError> {
        self.require_mut(id)?.state = state;
        Ok(())
    }

    pub fn isolate(&mut self, id: &DeviceId) -> Result<(), InteractionError> {
        self.require_mut(id)?.status = DeviceStatus::Isolated;
        Ok(())
    }

    pub fn reactivate(&mut self, id: &DeviceId) -> Result<(), InteractionError> {
        self.require_mut(id)?.status = DeviceStatus::Active;
        Ok(())
    }

    pub fn is_isolated(&self, id: &DeviceId) -> bool {
        self.devices.get(id).is_some_and(|d| !d.is_active())
    }

    /// Hands out the next X for a tree rooted at `id`.
    pub(crate) fn next_reading_seq(&mut self, id: &DeviceId) -> Result<u64, InteractionError> {
        let dev = self.require_mut(id)?;
        if !dev.is_active() {
            return Err(InteractionError::DeviceIsolated(id.to_string()));
        }
        let x = dev.reading_seq;
        dev.reading_seq += 1;
        Ok(x)
    }

    pub fn snapshot(&self) -> BTreeMap<DeviceId, DeviceState> {
        self.devices
            .iter()
            .map(|(k, v)| (k.clone(), v.state.clone()))
            .collect()
    }

    pub fn isolated(&self) -> Vec<DeviceId> {
        self.devices
            .values()
            .filter(|d| !d.is_active())
            .map(|d| d.device_id.clone())
            .collect()
    }

    /// Parses a device list `{"devices":[{id,type,addr,initial_state}]}`, or
    /// a full dump from [`Registry::to_json`] with live state, status and X
    /// counters kept.
    pub fn from_json(text: &str) -> Result<Self, InteractionError> {
        let file: AnyRegistryFile =
            serde_json::from_str(text).map_err(|e| InteractionError::Format(format!("registry: {e}")))?;
        let mut reg = Registry::new();
        match file {
            AnyRegistryFile::Definition(file) => {
                for e in file.devices {
                    reg.register_device(DeviceRecord::new(e.id, &e.device_type, e.addr, e.initial_state))?;
                }
            }
            AnyRegistryFile::Dump { devices } => {
                for d in devices {
                    let mut fresh = DeviceRecord::new(d.device_id.clone(), &d.device_type, d.addr, d.initial_state.clone());
                    fresh.state = d.state.clone();
                    reg.register_device(fresh)?;
                    let rec = reg.require_mut(&d.device_id)?;
                    rec.initial_state = d.initial_state;
                    rec.status = d.status;
                    rec.reading_seq = d.reading_seq;
                }
            }
        }
        Ok(reg)
    }

    /// Full dump including live state and status.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({ "devices": self.devices.values().collect::<Vec<_>>() })
    }

    /// Device list in the form [`Registry::from_json`] reads.
    pub fn to_definition_json(&self) -> String {
        let file = RegistryFile {
            devices: self
                .devices
                .values()
                .map(|d| RegistryEntry {
                    id: d.device_id.clone(),
                    device_type: d.device_type.clone(),
                    addr: d.addr,
                    initial_state: d.initial_state.clone(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("registry serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, InteractionError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| InteractionError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}

impl StateView for Registry {
    fn device_type(&self, id: &DeviceId) -> Option<&str> {
        self.devices.get(id).map(|d| d.device_type.as_str())
    }

    fn state(&self, id: &DeviceId) -> Option<&DeviceState> {
        self.devices.get(id).map(|d| &d.state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, last: u8) -> DeviceRecord {
        DeviceRecord::new(id, "smart_bulb", Ipv4Addr::new(10, 0, 0, last), DeviceState::Bool(false))
    }

    #[test]
    fn register_and_duplicates() {
        let mut r = Registry::new();
        r.register_device(rec("L1", 2)).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r.register_device(rec("L1", 3)).unwrap_err().code(), "DUPLICATE_ID");
        assert_eq!(r.register_device(rec("L2", 2)).unwrap_err().code(), "DUPLICATE_ADDR");
        assert_eq!(r.len(), 1);
    }

    #[test]
    fn testbed_mix_registers_active() {
        // device types of the twelve-device apartment testbed
        let types = [
            "smart_bulb", "smart_bulb", "smart_bulb", "smart_bulb", "smart_plug", "smart_plug",
            "smart_plug", "smart_plug", "smart_plug", "thermostat", "smart_speaker", "smart_kettle",
        ];
        let mut r = Registry::new();
        for (i, t) in types.iter().enumerate() {
            let d = DeviceRecord::new(format!("D{i}"), t, Ipv4Addr::new(10, 0, 0, 2 + i as u8), DeviceState::Bool(false));
            r.register_device(d).unwrap();
        }
        assert_eq!(r.len(), 12);
        assert!(r.iter().all(|d| d.is_active() && d.reading_seq == 1));
    }

    #[test]
    fn isolation_blocks_new_readings() {
        let mut r = Registry::new();
        r.register_device(rec("L1", 2)).unwrap();
        assert_eq!(r.next_reading_seq(&DeviceId::from("L1")).unwrap(), 1);
        r.isolate(&DeviceId::from("L1")).unwrap();
        assert_eq!(
            r.next_reading_seq(&DeviceId::from("L1")).unwrap_err().code(),
            "DEVICE_ISOLATED"
        );
        r.reactivate(&DeviceId::from("L1")).unwrap();
        assert_eq!(r.next_reading_seq(&DeviceId::from("L1")).unwrap(), 2);
        assert_eq!(r.isolate(&DeviceId::from("nope")).unwrap_err().code(), "UNKNOWN_DEVICE");
    }

    #[test]
    fn definition_round_trip() {
        let mut r = Registry::new();
        r.register_device(rec("L1", 2)).unwrap();
        r.register_device(DeviceRecord::new(
            "T1",
            "thermostat",
            Ipv4Addr::new(10, 0, 0, 9),
            DeviceState::Number(71.0),
        ))
        .unwrap();
        r.set_state(&DeviceId::from("T1"), DeviceState::Number(80.0)).unwrap();
        let back = Registry::from_json(&r.to_definition_json()).unwrap();
        assert_eq!(back.get(&DeviceId::from("T1")).unwrap().state, DeviceState::Number(71.0));
        assert_eq!(back.by_addr(Ipv4Addr::new(10, 0, 0, 2)).unwrap().device_id.as_str(), "L1");
    }

    #[test]
    fn dump_round_trip_keeps_status() {
        let mut r = Registry::new();
        r.register_device(rec("L1", 2)).unwrap();
        r.register_device(rec("L2", 3)).unwrap();
        r.set_state(&DeviceId::from("L1"), DeviceState::Bool(true)).unwrap();
        r.isolate(&DeviceId::from("L2")).unwrap();
        r.next_reading_seq(&DeviceId::from("L1")).unwrap();
        let back = Registry::from_json(&r.to_json().to_string()).unwrap();
        assert_eq!(back, r);
    }
}
