use std::collections::{BTreeMap, HashSet};
use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::interaction::{AutomationRule, DeviceRecord, DeviceSelector, Registry, RuleSet};
use crate::trace::TraceMeta;
use crate::types::{DeviceId, DeviceState};

pub const SCHEMA_VERSION: u32 = 1;

/// Which side opens the exchange of an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Initiator {
    /// Readings and reports pushed by the device.
    Device,
    /// Commands pushed by the controller.
    Controller,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    #[default]
    Tcp,
    Udp,
}

/// How an event changes the state of its device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Effect {
    None,
    /// State becomes the event's value.
    Reading,
    /// Flips a boolean state.
    Toggle,
    Set(DeviceState),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueDist {
    /// Uniform on `[lo, hi]`, rounded to a multiple of `step` when `step > 0`.
    Uniform {
        lo: f64,
        hi: f64,
        #[serde(default)]
        step: f64,
    },
    Choice(Vec<DeviceState>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventProfile {
    pub initiator: Initiator,
    #[serde(default)]
    pub transport: Transport,
    /// Payload length of the request packet.
    pub cmd_len: u32,
    /// Payload length of the response packet.
    pub rsp_len: u32,
    /// Additional response-side data packets.
    #[serde(default)]
    pub extra_packets: u32,
    pub effect: Effect,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<ValueDist>,
}

/// Traffic profile shared by devices of one make.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    /// Port the device listens on for controller commands.
    pub port: u16,
    /// Port the controller listens on for device reports.
    pub controller_port: u16,
    pub events: BTreeMap<String, EventProfile>,
}

/// A spontaneous device event: periodic or drawn each free tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Emission {
    pub event: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub every_ticks: Option<u64>,
    #[serde(default)]
    pub offset_ticks: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub id: DeviceId,
    #[serde(rename = "type")]
    pub device_type: String,
    pub profile: String,
    pub addr: Ipv4Addr,
    pub initial_state: DeviceState,
    #[serde(default)]
    pub emits: Vec<Emission>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AnomalyKind {
    GhostCommand,
    CommandFailure,
    DelayedUpdate,
    EventLoss,
    FalseReading,
    CompromisedInteraction,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 6] = [
        AnomalyKind::GhostCommand,
        AnomalyKind::CommandFailure,
        AnomalyKind::DelayedUpdate,
        AnomalyKind::EventLoss,
        AnomalyKind::FalseReading,
        AnomalyKind::CompromisedInteraction,
    ];

    /// Kinds whose wire footprint departs from the benign profile.
    pub fn is_packet_level(self) -> bool {
        matches!(
            self,
            AnomalyKind::GhostCommand
                | AnomalyKind::CommandFailure
                | AnomalyKind::DelayedUpdate
                | AnomalyKind::FalseReading
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectedAnomaly {
    pub kind: AnomalyKind,
    pub target: DeviceId,
    pub tick: u64,
    /// Event to use on the target; a kind-appropriate default otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_ticks: Option<u64>,
    /// Bogus value of a FALSE_READING.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<DeviceState>,
}

pub const MAX_DELAY_TICKS: u64 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Timing {
    /// Idle ticks between the end of one tree and the next root.
    pub tree_gap_ticks: u64,
    /// Ticks between the end of a parent exchange and a child exchange.
    pub relay_gap_ticks: u64,
    /// Mean inter-packet gap inside an exchange, seconds.
    pub packet_gap: f64,
    /// Relative half-width of the gap jitter.
    pub gap_jitter: f64,
    /// Half-width of the payload length jitter, bytes.
    pub length_jitter: u32,
}

impl Default for Timing {
    fn default() -> Self {
        Self {
            tree_gap_ticks: 60,
            relay_gap_ticks: 1,
            packet_gap: 0.004,
            gap_jitter: 0.03,
            length_jitter: 1,
        }
    }
}

fn default_tick() -> f64 {
    0.1
}

fn default_controller() -> Ipv4Addr {
    Ipv4Addr::new(10, 0, 0, 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema: u32,
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    #[serde(default = "default_tick")]
    pub tick_seconds: f64,
    pub duration_ticks: u64,
    #[serde(default = "default_controller")]
    pub controller_addr: Ipv4Addr,
    #[serde(default)]
    pub timing: Timing,
    #[serde(default)]
    pub profiles: BTreeMap<String, Profile>,
    #[serde(default)]
    pub devices: Vec<DeviceSpec>,
    #[serde(default)]
    pub rules: Vec<AutomationRule>,
    #[serde(default)]
    pub injections: Vec<InjectedAnomaly>,
}

fn invalid(path: impl Into<String>, reason: impl Into<String>) -> SimError {
    SimError::InvalidConfig {
        path: path.into(),
        reason: reason.into(),
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            invalid(if path == "." { String::new() } else { path }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn device(&self, id: &DeviceId) -> Option<&DeviceSpec> {
        self.devices.iter().find(|d| &d.id == id)
    }

    pub fn profile_of(&self, dev: &DeviceSpec) -> &Profile {
        &self.profiles[&dev.profile]
    }

    pub fn event_profile(&self, dev: &DeviceSpec, event: &str) -> Option<&EventProfile> {
        self.profiles.get(&dev.profile)?.events.get(event)
    }

    /// Devices selected by `sel`, in declaration order.
    pub fn select<'a>(&'a self, sel: &'a DeviceSelector) -> impl Iterator<Item = (usize, &'a DeviceSpec)> + 'a {
        self.devices.iter().enumerate().filter(move |(_, d)| match sel {
            DeviceSelector::Id(id) => &d.id == id,
            DeviceSelector::Type(t) => &d.device_type == t,
        })
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.schema != SCHEMA_VERSION {
            return Err(invalid("schema", format!("unsupported schema {}, expected {SCHEMA_VERSION}", self.schema)));
        }
        if !(self.tick_seconds.is_finite() && self.tick_seconds > 0.0) {
            return Err(invalid("tick_seconds", "must be a positive number"));
        }
        let t = &self.timing;
        if !(t.packet_gap.is_finite() && t.packet_gap > 0.0) {
            return Err(invalid("timing.packet_gap", "must be a positive number"));
        }
        if !(0.0..1.0).contains(&t.gap_jitter) {
            return Err(invalid("timing.gap_jitter", "must lie in [0, 1)"));
        }
        if t.relay_gap_ticks == 0 {
            return Err(invalid("timing.relay_gap_ticks", "must be at least 1"));
        }
        for (name, p) in &self.profiles {
            for (ev, e) in &p.events {
                let path = format!("profiles.{name}.events.{ev}");
                if e.cmd_len <= t.length_jitter || e.rsp_len <= t.length_jitter {
                    return Err(invalid(format!("{path}.cmd_len"), "lengths must exceed the length jitter"));
                }
                match &e.value {
                    Some(ValueDist::Uniform { lo, hi, step }) if !(lo <= hi && *step >= 0.0) => {
                        return Err(invalid(format!("{path}.value"), "uniform needs lo <= hi and step >= 0"));
                    }
                    Some(ValueDist::Choice(c)) if c.is_empty() => {
                        return Err(invalid(format!("{path}.value"), "choice list is empty"));
                    }
                    None if e.effect == Effect::Reading => {
                        return Err(invalid(format!("{path}.value"), "a reading effect needs a value distribution"));
                    }
                    _ => {}
                }
            }
        }
        let mut ids = HashSet::new();
        let mut addrs = HashSet::new();
        for (i, d) in self.devices.iter().enumerate() {
            let path = format!("devices[{i}]");
            if !ids.insert(&d.id) {
                return Err(invalid(format!("{path}.id"), format!("duplicate device id {}", d.id)));
            }
            if d.addr == self.controller_addr || !addrs.insert(d.addr) {
                return Err(invalid(format!("{path}.addr"), format!("address {} is not unique", d.addr)));
            }
            let Some(profile) = self.profiles.get(&d.profile) else {
                return Err(invalid(format!("{path}.profile"), format!("unknown profile {}", d.profile)));
            };
            for (j, em) in d.emits.iter().enumerate() {
                let epath = format!("{path}.emits[{j}]");
                match profile.events.get(&em.event) {
                    Some(e) if e.initiator == Initiator::Device => {}
                    _ => {
                        return Err(invalid(
                            format!("{epath}.event"),
                            format!("{} is not a device-initiated event of profile {}", em.event, d.profile),
                        ))
                    }
                }
                match (em.every_ticks, em.probability) {
                    (Some(n), None) if n > 0 => {}
                    (None, Some(p)) if p > 0.0 && p <= 1.0 => {}
                    _ => {
                        return Err(invalid(epath, "needs exactly one of every_ticks > 0 or probability in (0, 1]"));
                    }
                }
            }
        }
        RuleSet::new(self.rules.clone()).map_err(|e| invalid("rules", e.to_string()))?;
        for (i, r) in self.rules.iter().enumerate() {
            let path = format!("rules[{i}]");
            for (side, pat) in [("trigger", &r.trigger), ("action", &r.action)] {
                let selected: Vec<_> = self.select(&pat.device).collect();
                if selected.is_empty() {
                    return Err(invalid(format!("{path}.{side}.device"), format!("{} matches no device", pat.device)));
                }
                for (_, d) in selected {
                    let ok = match self.event_profile(d, &pat.event) {
                        Some(e) => side == "trigger" || e.initiator == Initiator::Controller,
                        None => false,
                    };
                    if !ok {
                        return Err(invalid(
                            format!("{path}.{side}.event"),
                            format!("{} is not a usable event of {}", pat.event, d.id),
                        ));
                    }
                }
            }
        }
        for (i, inj) in self.injections.iter().enumerate() {
            let path = format!("injections[{i}]");
            if inj.tick >= self.duration_ticks {
                return Err(invalid(format!("{path}.tick"), "injection lies outside the run"));
            }
            let Some(dev) = self.device(&inj.target) else {
                return Err(invalid(format!("{path}.target"), format!("unknown device {}", inj.target)));
            };
            let wants = match inj.kind {
                AnomalyKind::DelayedUpdate | AnomalyKind::FalseReading => Initiator::Device,
                _ => Initiator::Controller,
            };
            match &inj.event {
                Some(ev) => match self.event_profile(dev, ev) {
                    Some(e) if e.initiator == wants => {}
                    _ => return Err(invalid(format!("{path}.event"), format!("{ev} does not fit {:?} on {}", inj.kind, dev.id))),
                },
                None => {
                    if self.default_event(dev, inj.kind).is_none() {
                        return Err(invalid(format!("{path}.target"), format!("{} has no event usable for {:?}", dev.id, inj.kind)));
                    }
                }
            }
            match inj.kind {
                AnomalyKind::DelayedUpdate => match inj.delay_ticks {
                    Some(d) if (1..=MAX_DELAY_TICKS).contains(&d) => {}
                    _ => return Err(invalid(format!("{path}.delay_ticks"), format!("needs 1..={MAX_DELAY_TICKS}"))),
                },
                AnomalyKind::FalseReading if inj.value.is_none() => {
                    return Err(invalid(format!("{path}.value"), "FALSE_READING needs a bogus value"));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// First suitable event of `dev` for an injection of `kind`.
    pub fn default_event<'s>(&'s self, dev: &'s DeviceSpec, kind: AnomalyKind) -> Option<&'s str> {
        let profile = self.profiles.get(&dev.profile)?;
        match kind {
            AnomalyKind::DelayedUpdate | AnomalyKind::FalseReading => dev
                .emits
                .first()
                .map(|e| e.event.as_str())
                .or_else(|| {
                    profile
                        .events
                        .iter()
                        .find(|(_, e)| e.initiator == Initiator::Device)
                        .map(|(k, _)| k.as_str())
                }),
            _ => profile
                .events
                .iter()
                .find(|(_, e)| e.initiator == Initiator::Controller)
                .map(|(k, _)| k.as_str()),
        }
    }

    pub fn rule_set(&self) -> RuleSet {
        RuleSet::new(self.rules.clone()).expect("validated rules")
    }

    /// The controller's view of the deployment at registration time.
    pub fn registry(&self) -> Registry {
        let mut reg = Registry::new();
        for d in &self.devices {
            reg.register_device(DeviceRecord::new(d.id.clone(), &d.device_type, d.addr, d.initial_state.clone()))
                .expect("validated devices");
        }
        reg
    }

    pub fn trace_meta(&self) -> TraceMeta {
        let map = self.devices.iter().map(|d| (d.addr, d.id.clone())).collect();
        TraceMeta::new(self.controller_addr, map).expect("validated addresses")
    }
}
