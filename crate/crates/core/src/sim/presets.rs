//! Built-in scenarios.
//!
//! The testbed layout follows a one-bedroom apartment with four lights, five
//! smart plugs, a thermostat, a smart speaker and a kettle. Traffic numbers
//! are invented; only their shape matters.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::config::{
    AnomalyKind, DeviceSpec, Emission, InjectedAnomaly, Initiator, Profile, ScenarioConfig, Timing, ValueDist,
    MAX_DELAY_TICKS, SCHEMA_VERSION,
};
use crate::interaction::{AutomationRule, Comparator, Condition, ConditionField, DeviceSelector, EventPattern};
use crate::types::{DeviceId, DeviceState};

pub const S1_SEED: u64 = 42;
pub const S1_DURATION_TICKS: u64 = 640_000;
pub const S1_INJECTIONS: usize = 1_650;

fn profile(v: serde_json::Value) -> Profile {
    serde_json::from_value(v).expect("built-in profile")
}

/// Traffic profiles of the testbed device makes.
pub fn testbed_profiles() -> BTreeMap<String, Profile> {
    let mut p = BTreeMap::new();
    p.insert(
        "bulb".into(),
        profile(json!({"port": 55443, "controller_port": 8883, "events": {
            "turn_on": {"initiator": "controller", "cmd_len": 180, "rsp_len": 120, "effect": {"set": true}},
            "turn_off": {"initiator": "controller", "cmd_len": 230, "rsp_len": 120, "effect": {"set": false}},
            "set_brightness": {"initiator": "controller", "cmd_len": 280, "rsp_len": 130, "effect": "none",
                "value": {"uniform": {"lo": 10.0, "hi": 100.0, "step": 1.0}}},
            "set_color": {"initiator": "controller", "cmd_len": 330, "rsp_len": 140, "effect": "none",
                "value": {"choice": ["warm", "cool", "red", "blue"]}}
        }})),
    );
    p.insert(
        "plug".into(),
        profile(json!({"port": 9999, "controller_port": 8883, "events": {
            "turn_on": {"initiator": "controller", "cmd_len": 170, "rsp_len": 110, "effect": {"set": true}},
            "turn_off": {"initiator": "controller", "cmd_len": 220, "rsp_len": 110, "effect": {"set": false}},
            "switch_toggled": {"initiator": "device", "cmd_len": 150, "rsp_len": 90, "effect": "toggle"},
            "power_reading": {"initiator": "device", "transport": "udp", "cmd_len": 210, "rsp_len": 64, "effect": "none",
                "value": {"uniform": {"lo": 0.0, "hi": 1500.0, "step": 1.0}}},
            "energy_report": {"initiator": "device", "cmd_len": 260, "rsp_len": 90, "extra_packets": 1, "effect": "none",
                "value": {"uniform": {"lo": 0.0, "hi": 5.0, "step": 0.01}}}
        }})),
    );
    p.insert(
        "thermostat".into(),
        profile(json!({"port": 8089, "controller_port": 8883, "events": {
            "temp_reading": {"initiator": "device", "cmd_len": 200, "rsp_len": 100, "effect": "none",
                "value": {"uniform": {"lo": 60.0, "hi": 85.0, "step": 0.5}}},
            "humidity_reading": {"initiator": "device", "cmd_len": 250, "rsp_len": 100, "effect": "none",
                "value": {"uniform": {"lo": 20.0, "hi": 80.0, "step": 1.0}}},
            "set_heat": {"initiator": "controller", "cmd_len": 190, "rsp_len": 130, "effect": {"set": "heat"}},
            "set_cool": {"initiator": "controller", "cmd_len": 240, "rsp_len": 130, "effect": {"set": "cool"}},
            "set_fan": {"initiator": "controller", "cmd_len": 290, "rsp_len": 130, "effect": {"set": "fan"}},
            "set_eco": {"initiator": "controller", "cmd_len": 340, "rsp_len": 130, "effect": {"set": "eco"}}
        }})),
    );
    p.insert(
        "speaker".into(),
        profile(json!({"port": 4070, "controller_port": 443, "events": {
            "voice_command": {"initiator": "device", "cmd_len": 400, "rsp_len": 220, "extra_packets": 2, "effect": "none",
                "value": {"choice": ["lights_on", "lights_off", "boil", "music", "weather"]}},
            "play_music": {"initiator": "controller", "cmd_len": 210, "rsp_len": 160, "effect": {"set": "playing"}},
            "stop_music": {"initiator": "controller", "cmd_len": 260, "rsp_len": 160, "effect": {"set": "idle"}},
            "announce": {"initiator": "controller", "cmd_len": 320, "rsp_len": 180, "effect": "none"}
        }})),
    );
    p.insert(
        "kettle".into(),
        profile(json!({"port": 6668, "controller_port": 8883, "events": {
            "boil_start": {"initiator": "controller", "cmd_len": 160, "rsp_len": 100, "effect": {"set": "boiling"}},
            "keep_warm": {"initiator": "controller", "cmd_len": 210, "rsp_len": 100, "effect": {"set": "warm"}},
            "boil_done": {"initiator": "device", "cmd_len": 140, "rsp_len": 80, "effect": {"set": "idle"}}
        }})),
    );
    p
}

fn every(event: &str, ticks: u64, offset: u64) -> Emission {
    Emission {
        event: event.into(),
        every_ticks: Some(ticks),
        offset_ticks: offset,
        probability: None,
    }
}

fn chance(event: &str, p: f64) -> Emission {
    Emission {
        event: event.into(),
        every_ticks: None,
        offset_ticks: 0,
        probability: Some(p),
    }
}

fn device(id: &str, ty: &str, profile: &str, last: u8, state: DeviceState, emits: Vec<Emission>) -> DeviceSpec {
    DeviceSpec {
        id: DeviceId::from(id),
        device_type: ty.into(),
        profile: profile.into(),
        addr: Ipv4Addr::new(10, 0, 0, last),
        initial_state: state,
        emits,
    }
}

fn mode(s: &str) -> DeviceState {
    DeviceState::Mode(s.into())
}

/// The twelve testbed devices with their spontaneous events.
pub fn testbed_devices() -> Vec<DeviceSpec> {
    let mut devs = Vec::new();
    for i in 1..=4u8 {
        devs.push(device(&format!("L{i}"), "smart_bulb", "bulb", 10 + i, DeviceState::Bool(false), vec![]));
    }
    for i in 1..=5u8 {
        let n = i as u64;
        devs.push(device(
            &format!("S{i}"),
            "smart_plug",
            "plug",
            20 + i,
            DeviceState::Bool(false),
            vec![
                every("power_reading", 1500, 97 * n),
                every("energy_report", 3000, 400 + 131 * n),
                chance("switch_toggled", 0.0015),
            ],
        ));
    }
    devs.push(device(
        "T1",
        "thermostat",
        "thermostat",
        30,
        mode("off"),
        vec![every("temp_reading", 600, 11), every("humidity_reading", 1200, 313)],
    ));
    devs.push(device("E1", "smart_speaker", "speaker", 31, mode("idle"), vec![chance("voice_command", 0.005)]));
    devs.push(device("K1", "smart_kettle", "kettle", 32, mode("idle"), vec![chance("boil_done", 0.001)]));
    devs
}

fn pat(device: &str, event: &str) -> EventPattern {
    EventPattern {
        device: DeviceSelector::parse(device),
        event: event.into(),
    }
}

fn rule(id: &str, trigger: (&str, &str), cond: Option<(&str, DeviceState)>, action: (&str, &str)) -> AutomationRule {
    AutomationRule {
        id: id.into(),
        trigger: pat(trigger.0, trigger.1),
        condition: cond.map(|(op, value)| Condition {
            field: ConditionField::Reading,
            op: Comparator::parse(op).expect("known comparator"),
            value,
        }),
        action: pat(action.0, action.1),
    }
}

/// Automation rules of the testbed. Conditions only look at the triggering
/// reading, so the controller never depends on states it could not observe.
pub fn testbed_rules() -> Vec<AutomationRule> {
    let n = DeviceState::Number;
    vec![
        rule("hot-fan", ("T1", "temp_reading"), Some((">", n(78.0))), ("S2", "turn_on")),
        rule("mild-fan-off", ("T1", "temp_reading"), Some(("<=", n(72.0))), ("S2", "turn_off")),
        rule("cold-heater", ("T1", "temp_reading"), Some(("<", n(64.0))), ("S3", "turn_on")),
        rule("warm-heater-off", ("T1", "temp_reading"), Some((">=", n(70.0))), ("S3", "turn_off")),
        rule("fan-announce", ("S2", "turn_on"), None, ("E1", "announce")),
        rule("humid-dry", ("T1", "humidity_reading"), Some((">", n(65.0))), ("S4", "turn_on")),
        rule("dry-off", ("T1", "humidity_reading"), Some(("<", n(30.0))), ("S4", "turn_off")),
        rule("dry-color", ("S4", "turn_on"), None, ("L4", "set_color")),
        rule("voice-lights-on", ("E1", "voice_command"), Some(("=", mode("lights_on"))), ("type:smart_bulb", "turn_on")),
        rule("voice-lights-off", ("E1", "voice_command"), Some(("=", mode("lights_off"))), ("type:smart_bulb", "turn_off")),
        rule("voice-boil", ("E1", "voice_command"), Some(("=", mode("boil"))), ("K1", "boil_start")),
        rule("voice-music", ("E1", "voice_command"), Some(("=", mode("music"))), ("S5", "turn_on")),
        rule("voice-weather", ("E1", "voice_command"), Some(("=", mode("weather"))), ("L4", "set_brightness")),
        rule("boil-dim", ("K1", "boil_start"), None, ("L2", "set_brightness")),
        rule("boiled-announce", ("K1", "boil_done"), None, ("E1", "announce")),
        rule("boiled-light", ("K1", "boil_done"), None, ("L3", "set_brightness")),
        rule("s1-color", ("S1", "switch_toggled"), None, ("L1", "set_color")),
        rule("s2-cool", ("S2", "switch_toggled"), None, ("T1", "set_cool")),
        rule("s3-heat", ("S3", "switch_toggled"), None, ("T1", "set_heat")),
        rule("s4-play", ("S4", "switch_toggled"), None, ("E1", "play_music")),
        rule("s5-stop", ("S5", "switch_toggled"), None, ("E1", "stop_music")),
        rule("overload-eco", ("type:smart_plug", "power_reading"), Some((">", n(1200.0))), ("T1", "set_eco")),
        rule("energy-fan", ("type:smart_plug", "energy_report"), Some((">", n(4.5))), ("T1", "set_fan")),
        rule("lamp-fan", ("L1", "turn_on"), None, ("T1", "set_fan")),
        rule("lamp-warm", ("L2", "turn_on"), None, ("K1", "keep_warm")),
        rule("amp-color", ("S5", "turn_on"), None, ("L3", "set_color")),
    ]
}

fn base(name: &str, seed: u64, duration_ticks: u64) -> ScenarioConfig {
    ScenarioConfig {
        schema: SCHEMA_VERSION,
        name: name.into(),
        seed,
        tick_seconds: 0.1,
        duration_ticks,
        controller_addr: Ipv4Addr::new(10, 0, 0, 1),
        timing: Timing::default(),
        profiles: BTreeMap::new(),
        devices: Vec::new(),
        rules: Vec::new(),
        injections: Vec::new(),
    }
}

pub fn empty() -> ScenarioConfig {
    base("empty", 0, 10)
}

/// One motion sensor, one bulb, one rule.
pub fn motion_bulb(duration_ticks: u64) -> ScenarioConfig {
    let mut c = base("motion-bulb", 1, duration_ticks);
    c.profiles = testbed_profiles().into_iter().filter(|(k, _)| k == "bulb").collect();
    c.profiles.insert(
        "motion".into(),
        profile(json!({"port": 5683, "controller_port": 8883, "events": {
            "motion_detected": {"initiator": "device", "cmd_len": 130, "rsp_len": 70, "effect": {"set": true}}
        }})),
    );
    c.devices = vec![
        device("M1", "motion_sensor", "motion", 40, DeviceState::Bool(false), vec![every("motion_detected", 5, 0)]),
        device("L1", "smart_bulb", "bulb", 11, DeviceState::Bool(false), vec![]),
    ];
    c.rules = vec![rule("motion-light", ("M1", "motion_detected"), None, ("L1", "turn_on"))];
    c
}

/// The injection-free testbed.
pub fn s0(seed: u64, duration_ticks: u64) -> ScenarioConfig {
    let mut c = base("S0", seed, duration_ticks);
    c.profiles = testbed_profiles();
    c.devices = testbed_devices();
    c.rules = testbed_rules();
    c
}

/// Devices (with their event) whose compromise propagates to a disjoint set
/// of devices.
const S1_COMPROMISES: [(&str, &str); 5] = [
    ("K1", "boil_start"),
    ("S2", "turn_on"),
    ("S4", "turn_on"),
    ("L1", "turn_on"),
    ("S5", "turn_on"),
];

/// The anomalous testbed: roughly one event in ten is injected.
pub fn s1() -> ScenarioConfig {
    let mut c = s0(S1_SEED, S1_DURATION_TICKS);
    c.name = "S1".into();
    let mut rng = ChaCha8Rng::seed_from_u64(S1_SEED ^ 0x5e1);
    let weighted = [
        (AnomalyKind::GhostCommand, 30u32),
        (AnomalyKind::CommandFailure, 25),
        (AnomalyKind::DelayedUpdate, 20),
        (AnomalyKind::FalseReading, 20),
        (AnomalyKind::EventLoss, 5),
    ];
    let total: u32 = weighted.iter().map(|w| w.1).sum();
    let mut inj = Vec::new();
    for _ in 0..S1_INJECTIONS - S1_COMPROMISES.len() {
        let mut pick = rng.random_range(0..total);
        let kind = weighted
            .iter()
            .find(|(_, w)| {
                if pick < *w {
                    true
                } else {
                    pick -= w;
                    false
                }
            })
            .map(|w| w.0)
            .expect("weights cover the range");
        let tick = rng.random_range(0..c.duration_ticks * 19 / 20);
        inj.push(random_injection(&c, kind, tick, &mut rng));
    }
    let step = c.duration_ticks / (S1_COMPROMISES.len() as u64 + 1);
    for (i, (dev, ev)) in S1_COMPROMISES.iter().enumerate() {
        inj.push(InjectedAnomaly {
            kind: AnomalyKind::CompromisedInteraction,
            target: DeviceId::from(*dev),
            tick: step * (i as u64 + 1),
            event: Some(ev.to_string()),
            delay_ticks: None,
            value: None,
        });
    }
    inj.sort_by_key(|a| a.tick);
    c.injections = inj;
    c
}

/// Out-of-range value for a reading of `event` on `dev`.
pub fn bogus_value(c: &ScenarioConfig, dev: &DeviceSpec, event: &str) -> DeviceState {
    match c.event_profile(dev, event).and_then(|e| e.value.as_ref()) {
        Some(ValueDist::Uniform { hi, .. }) => DeviceState::Number((hi * 1.5 + 17.0).round()),
        Some(ValueDist::Choice(_)) => DeviceState::Mode("unlock_door".into()),
        None => DeviceState::Bool(true),
    }
}

fn random_injection(c: &ScenarioConfig, kind: AnomalyKind, tick: u64, rng: &mut ChaCha8Rng) -> InjectedAnomaly {
    let wants = match kind {
        AnomalyKind::DelayedUpdate | AnomalyKind::FalseReading => Initiator::Device,
        _ => Initiator::Controller,
    };
    let candidates: Vec<(&DeviceSpec, &str)> = c
        .devices
        .iter()
        .flat_map(|d| {
            let evs: Vec<&str> = match wants {
                Initiator::Device => d.emits.iter().map(|e| e.event.as_str()).collect(),
                Initiator::Controller => c.profiles[&d.profile]
                    .events
                    .iter()
                    .filter(|(_, e)| e.initiator == Initiator::Controller)
                    .map(|(k, _)| k.as_str())
                    .collect(),
            };
            evs.into_iter().map(move |e| (d, e))
        })
        .collect();
    let (dev, event) = *candidates.choose(rng).expect("scenario has a suitable device");
    let mut a = InjectedAnomaly {
        kind,
        target: dev.id.clone(),
        tick,
        event: Some(event.to_string()),
        delay_ticks: None,
        value: None,
    };
    match kind {
        AnomalyKind::DelayedUpdate => a.delay_ticks = Some(rng.random_range(1..=MAX_DELAY_TICKS)),
        AnomalyKind::FalseReading => a.value = Some(bogus_value(c, dev, event)),
        AnomalyKind::GhostCommand | AnomalyKind::EventLoss => a.event = None,
        _ => {}
    }
    a
}

/// Random home built from the testbed device makes: a device subset,
/// random automation rules and random spontaneous events. No injections.
pub fn random_scenario(seed: u64, duration_ticks: u64) -> ScenarioConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = base(&format!("random-{seed}"), seed, duration_ticks);
    c.profiles = testbed_profiles();
    let all = testbed_devices();
    let n = rng.random_range(6..=all.len());
    let mut picked: Vec<DeviceSpec> = rand::seq::index::sample(&mut rng, all.len(), n)
        .into_iter()
        .map(|i| all[i].clone())
        .collect();
    picked.sort_by_key(|d| d.addr);
    for d in picked.iter_mut() {
        let readers: Vec<String> = c.profiles[&d.profile]
            .events
            .iter()
            .filter(|(_, e)| e.initiator == Initiator::Device)
            .map(|(k, _)| k.clone())
            .collect();
        d.emits.clear();
        for e in readers {
            if rng.random_bool(0.7) {
                d.emits.push(chance(&e, rng.random_range(0.002..0.01)));
            }
        }
    }
    if picked.iter().all(|d| d.emits.is_empty()) {
        let i = picked
            .iter()
            .position(|d| c.profiles[&d.profile].events.values().any(|e| e.initiator == Initiator::Device))
            .unwrap_or(0);
        let ev = c.profiles[&picked[i].profile]
            .events
            .iter()
            .find(|(_, e)| e.initiator == Initiator::Device)
            .map(|(k, _)| k.clone());
        if let Some(ev) = ev {
            picked[i].emits.push(chance(&ev, 0.01));
        }
    }
    c.devices = picked;

    let events_of = |d: &DeviceSpec, who: Option<Initiator>| -> Vec<String> {
        c.profiles[&d.profile]
            .events
            .iter()
            .filter(|(_, e)| who.is_none_or(|w| e.initiator == w))
            .map(|(k, _)| k.clone())
            .collect()
    };
    let n_rules = rng.random_range(c.devices.len()..=2 * c.devices.len());
    let mut seen = BTreeSet::new();
    let mut rules = Vec::new();
    for i in 0..n_rules * 3 {
        if rules.len() == n_rules {
            break;
        }
        let a = rng.random_range(0..c.devices.len());
        let b = rng.random_range(0..c.devices.len());
        if a == b {
            continue;
        }
        let (da, db) = (&c.devices[a], &c.devices[b]);
        let Some(tev) = events_of(da, None).choose(&mut rng).cloned() else { continue };
        let Some(aev) = events_of(db, Some(Initiator::Controller)).choose(&mut rng).cloned() else { continue };
        if !seen.insert((a, tev.clone(), b, aev.clone())) {
            continue;
        }
        let tprof = &c.profiles[&da.profile].events[&tev];
        let condition = match (&tprof.value, rng.random_range(0..10)) {
            (Some(ValueDist::Uniform { lo, hi, .. }), 0..=3) => Some(Condition {
                field: ConditionField::Reading,
                op: if rng.random_bool(0.5) { Comparator::Gt } else { Comparator::Le },
                value: DeviceState::Number(((lo + hi) / 2.0).round()),
            }),
            (_, 4) => {
                let other = &c.devices[rng.random_range(0..c.devices.len())];
                Some(Condition {
                    field: ConditionField::State(other.id.clone()),
                    op: Comparator::Ne,
                    value: DeviceState::Mode("broken".into()),
                })
            }
            _ => None,
        };
        rules.push(AutomationRule {
            id: format!("r{i}"),
            trigger: EventPattern {
                device: DeviceSelector::Id(da.id.clone()),
                event: tev,
            },
            condition,
            action: EventPattern {
                device: DeviceSelector::Id(db.id.clone()),
                event: aev,
            },
        });
    }
    c.rules = rules;
    c
}

/// Whether `event` on `dev` triggers at least one rule.
pub fn has_downstream(c: &ScenarioConfig, dev: &DeviceId, event: &str) -> bool {
    c.rules.iter().any(|r| {
        r.trigger.event == event
            && match &r.trigger.device {
                DeviceSelector::Id(id) => id == dev,
                DeviceSelector::Type(t) => c.device(dev).is_some_and(|d| &d.device_type == t),
            }
    })
}
