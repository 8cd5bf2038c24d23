use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{
    AnomalyKind, Effect, EventProfile, InjectedAnomaly, Initiator, ScenarioConfig, Transport, ValueDist,
};
use super::SimError;
use crate::interaction::{RuleSet, StateView};
use crate::trace::{Direction, PacketRecord, Proto, TcpFlags};
use crate::types::{DeviceId, DeviceState, Label};

/// One event that happened in the simulated home.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub id: u64,
    pub tick: u64,
    /// Start of the wire exchange (event time when there is none).
    pub ts: f64,
    pub device: DeviceId,
    pub event: String,
    /// Ledger id of the event that caused this one.
    pub cause: Option<u64>,
    pub tree: Option<u64>,
    pub value: Option<DeviceState>,
    pub state_after: DeviceState,
    pub label: Label,
    pub kind: Option<AnomalyKind>,
    pub wire: bool,
}

impl LedgerEntry {
    /// Label of the event's wire footprint.
    pub fn packet_label(&self) -> Label {
        match self.kind {
            Some(k) if k.is_packet_level() => Label::Anomalous,
            _ => Label::Benign,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub benign: usize,
    pub anomalous: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionOutcome {
    pub index: usize,
    pub kind: AnomalyKind,
    pub target: DeviceId,
    pub tick: u64,
    /// Ledger ids labeled by this injection.
    pub events: Vec<u64>,
    /// State changed without any traffic.
    pub suppressed: bool,
    /// Ledger ids of the anomalous subtree, depth-first from the injected event.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub affected_events: Vec<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub affected_devices: Vec<DeviceId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub schema: u32,
    pub seed: u64,
    pub tick_seconds: f64,
    pub event_count: usize,
    /// Per-event labels over all ledger events.
    pub label_counts: ClassCounts,
    /// Labels of wire footprints (what a packet classifier can see).
    pub packet_label_counts: ClassCounts,
    pub kind_counts: BTreeMap<AnomalyKind, usize>,
    pub injections: Vec<InjectionOutcome>,
    pub final_states: BTreeMap<DeviceId, DeviceState>,
}

/// Trace, ledger and ground truth of one run.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub records: Vec<PacketRecord>,
    pub ledger: Vec<LedgerEntry>,
    pub truth: GroundTruth,
}

struct World {
    types: BTreeMap<DeviceId, String>,
    states: BTreeMap<DeviceId, DeviceState>,
}

impl StateView for World {
    fn device_type(&self, id: &DeviceId) -> Option<&str> {
        self.types.get(id).map(String::as_str)
    }

    fn state(&self, id: &DeviceId) -> Option<&DeviceState> {
        self.states.get(id)
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Shape {
    Normal,
    Ghost,
    CommandFailure,
    Delayed,
    FalseReading,
}

const SYN_LEN: u32 = 74;
const CTL_LEN: u32 = 66;
const RST_LEN: u32 = 60;
const FALSE_READING_INFLATION: u32 = 64;
const DEVICE_PORT_BASE: u16 = 49152;
const CONTROLLER_PORT_BASE: u16 = 40000;

struct Node {
    ledger: u64,
    dev: usize,
    event: String,
    value: Option<DeviceState>,
}

struct Engine<'a> {
    cfg: &'a ScenarioConfig,
    rules: RuleSet,
    world: World,
    rng: ChaCha8Rng,
    records: Vec<PacketRecord>,
    ledger: Vec<LedgerEntry>,
    trees: u64,
    outcomes: Vec<InjectionOutcome>,
    compromised: HashSet<usize>,
}

/// Runs a validated scenario to completion.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<SimOutput, SimError> {
    cfg.validate()?;
    let world = World {
        types: cfg.devices.iter().map(|d| (d.id.clone(), d.device_type.clone())).collect(),
        states: cfg.devices.iter().map(|d| (d.id.clone(), d.initial_state.clone())).collect(),
    };
    let mut eng = Engine {
        cfg,
        rules: cfg.rule_set(),
        world,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        records: Vec::new(),
        ledger: Vec::new(),
        trees: 0,
        outcomes: Vec::new(),
        compromised: HashSet::new(),
    };
    eng.run()?;
    Ok(eng.finish())
}

impl<'a> Engine<'a> {
    fn tick_ts(&self, tick: u64) -> f64 {
        tick as f64 * self.cfg.tick_seconds
    }

    /// First tick at least a relay gap after `ts`.
    fn tick_after(&self, ts: f64) -> u64 {
        (ts / self.cfg.tick_seconds).floor() as u64 + self.cfg.timing.relay_gap_ticks
    }

    fn run(&mut self) -> Result<(), SimError> {
        let cfg = self.cfg;
        let mut next_due: Vec<Vec<u64>> = cfg
            .devices
            .iter()
            .map(|d| d.emits.iter().map(|e| e.offset_ticks).collect())
            .collect();
        let mut pending: VecDeque<(usize, &InjectedAnomaly)> = {
            let mut v: Vec<_> = cfg.injections.iter().enumerate().collect();
            v.sort_by_key(|(i, inj)| (inj.tick, *i));
            v.into()
        };
        let mut armed: Option<(usize, &InjectedAnomaly)> = None;
        let mut t = 0u64;
        while t < cfg.duration_ticks || !pending.is_empty() || armed.is_some() {
            let overtime = t >= cfg.duration_ticks;
            // due injections first; EVENT_LOSS never occupies the wire
            let mut occupied = None;
            let mut i = 0;
            while i < pending.len() && pending[i].1.tick <= t {
                let (idx, inj) = pending[i];
                match inj.kind {
                    AnomalyKind::EventLoss => {
                        pending.remove(i);
                        self.event_loss(idx, inj, t);
                        continue;
                    }
                    AnomalyKind::CompromisedInteraction => {
                        if armed.is_none() {
                            pending.remove(i);
                            armed = Some((idx, inj));
                            continue;
                        }
                    }
                    _ => {
                        pending.remove(i);
                        occupied = Some(self.standalone(idx, inj, t)?);
                        break;
                    }
                }
                i += 1;
            }
            if let Some(end) = occupied {
                t = end + cfg.timing.tree_gap_ticks;
                continue;
            }

            let root = if overtime {
                // past the horizon only a waiting compromise may force a tree
                match armed {
                    Some((idx, inj)) => Some(self.forced_root(idx, inj)?),
                    None => {
                        t += 1;
                        continue;
                    }
                }
            } else {
                self.pick_root(t, &mut next_due)
            };
            let Some((dev, event)) = root else {
                t += 1;
                continue;
            };
            let compromise = armed.filter(|(_, inj)| self.can_host(dev, &event, inj));
            if compromise.is_some() {
                armed = None;
            }
            let end = self.run_tree(dev, &event, t, None, compromise)?;
            t = end + cfg.timing.tree_gap_ticks;
        }
        Ok(())
    }

    /// Root of the tree starting at free tick `t`, if any device fires.
    fn pick_root(&mut self, t: u64, next_due: &mut [Vec<u64>]) -> Option<(usize, String)> {
        let mut best: Option<(u64, usize, usize)> = None;
        for (di, d) in self.cfg.devices.iter().enumerate() {
            for (ei, em) in d.emits.iter().enumerate() {
                let due = match (em.every_ticks, em.probability) {
                    (Some(_), _) => (t >= next_due[di][ei]).then_some(next_due[di][ei]),
                    (None, Some(p)) => (self.rng.random::<f64>() < p).then_some(t),
                    _ => None,
                };
                if let Some(due) = due {
                    if best.is_none_or(|b| (due, di, ei) < b) {
                        best = Some((due, di, ei));
                    }
                }
            }
        }
        let (_, di, ei) = best?;
        let em = &self.cfg.devices[di].emits[ei];
        if let Some(every) = em.every_ticks {
            next_due[di][ei] = t + every;
        }
        Some((di, em.event.clone()))
    }

    /// Devices reachable through rules from `event` on `dev`.
    fn downstream(&self, dev: usize, event: &str) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut todo = vec![(dev, event.to_string())];
        let mut visited = HashSet::new();
        while let Some((d, ev)) = todo.pop() {
            if !visited.insert((d, ev.clone())) {
                continue;
            }
            let id = &self.cfg.devices[d].id;
            for r in self.rules.triggered_by(id, &ev, &self.world) {
                for (ci, _) in self.cfg.select(&r.action.device) {
                    seen.insert(ci);
                    todo.push((ci, r.action.event.clone()));
                }
            }
        }
        seen
    }

    fn compromise_event(&self, inj: &InjectedAnomaly) -> String {
        let dev = self.cfg.device(&inj.target).expect("validated target");
        inj.event
            .clone()
            .unwrap_or_else(|| self.cfg.default_event(dev, inj.kind).expect("validated").to_string())
    }

    fn can_host(&self, root: usize, root_event: &str, inj: &InjectedAnomaly) -> bool {
        let target = self.index_of(&inj.target);
        let root_id = &self.cfg.devices[root].id;
        if root == target || self.compromised.contains(&root) {
            return false;
        }
        let ev = self.compromise_event(inj);
        if self.downstream(target, &ev).contains(&root) {
            return false;
        }
        // the action must stay unlicensed from the root
        !self
            .rules
            .rules()
            .iter()
            .any(|r| r.trigger_matches(root_id, root_event, &self.world) && r.action_matches(&inj.target, &ev, &self.world))
    }

    fn forced_root(&self, idx: usize, inj: &InjectedAnomaly) -> Result<(usize, String), SimError> {
        for (di, d) in self.cfg.devices.iter().enumerate() {
            if let Some(em) = d.emits.first() {
                if self.can_host(di, &em.event, inj) {
                    return Ok((di, em.event.clone()));
                }
            }
        }
        Err(SimError::InvalidConfig {
            path: format!("injections[{idx}]"),
            reason: "no device can root a tree for this compromised interaction".into(),
        })
    }

    fn index_of(&self, id: &DeviceId) -> usize {
        self.cfg.devices.iter().position(|d| &d.id == id).expect("validated device")
    }

    fn draw_value(&mut self, ep: &EventProfile) -> Option<DeviceState> {
        match ep.value.as_ref()? {
            ValueDist::Uniform { lo, hi, step } => {
                let mut v = if hi > lo { self.rng.random_range(*lo..=*hi) } else { *lo };
                if *step > 0.0 {
                    v = (v / step).round() * step;
                    // keep a short decimal form
                    v = (v * 1e6).round() / 1e6;
                }
                Some(DeviceState::Number(v))
            }
            ValueDist::Choice(c) => {
                let i = self.rng.random_range(0..c.len());
                Some(c[i].clone())
            }
        }
    }

    fn apply_effect(&mut self, dev: usize, effect: &Effect, value: Option<&DeviceState>) -> DeviceState {
        let id = &self.cfg.devices[dev].id;
        let state = self.world.states.get_mut(id).expect("known device");
        match effect {
            Effect::None => {}
            Effect::Reading => {
                if let Some(v) = value {
                    *state = v.clone();
                }
            }
            Effect::Toggle => {
                if let DeviceState::Bool(b) = state {
                    *b = !*b;
                }
            }
            Effect::Set(s) => *state = s.clone(),
        }
        state.clone()
    }

    fn jitter_len(&mut self, base: u32) -> u32 {
        let j = self.cfg.timing.length_jitter as i64;
        let d = if j > 0 { self.rng.random_range(-j..=j) } else { 0 };
        (base as i64 + d).max(1) as u32
    }

    /// Emits the packets of one exchange starting at `start`; returns the
    /// timestamp of its last packet.
    fn exchange(&mut self, dev: usize, ep: &EventProfile, initiator: Initiator, shape: Shape, start: f64) -> f64 {
        let cfg = self.cfg;
        let spec = &cfg.devices[dev];
        let profile = cfg.profile_of(spec);
        let mut cmd = self.jitter_len(ep.cmd_len);
        let rsp = self.jitter_len(ep.rsp_len);
        let mut extra = ep.extra_packets;
        match shape {
            Shape::Ghost => extra += 1,
            Shape::FalseReading => {
                cmd += FALSE_READING_INFLATION;
                extra += 2;
            }
            _ => {}
        }
        let ack_psh = TcpFlags::PSH.union(TcpFlags::ACK);
        let fin_ack = TcpFlags::FIN.union(TcpFlags::ACK);
        // (sent by initiator, flags, length, gap multiplier before the packet)
        let mut pk: Vec<(bool, TcpFlags, u32, f64)> = Vec::with_capacity(12);
        let (tcp, proto) = match ep.transport {
            Transport::Tcp => (true, Proto::Tcp),
            Transport::Udp => (false, Proto::Udp),
        };
        let none = TcpFlags::empty();
        if tcp {
            pk.push((true, TcpFlags::SYN, SYN_LEN, 0.0));
            pk.push((false, TcpFlags::SYN.union(TcpFlags::ACK), SYN_LEN, 1.0));
            pk.push((true, TcpFlags::ACK, CTL_LEN, 1.0));
        }
        let data = if tcp { ack_psh } else { none };
        if shape == Shape::CommandFailure {
            pk.push((false, TcpFlags::RST, RST_LEN, 1.0));
        } else {
            pk.push((true, data, cmd, if tcp { 1.0 } else { 0.0 }));
            if shape == Shape::Delayed {
                pk.push((true, data, cmd, 4.0));
                pk.push((true, data, cmd, 8.0));
            }
            pk.push((false, data, rsp, 1.0));
            for _ in 0..extra {
                pk.push((false, data, rsp, 1.0));
            }
            if tcp {
                pk.push((true, fin_ack, CTL_LEN, 1.0));
                pk.push((false, fin_ack, CTL_LEN, 1.0));
                pk.push((true, TcpFlags::ACK, CTL_LEN, 1.0));
            }
        }
        let stretch = if shape == Shape::Delayed { 3.0 } else { 1.0 };
        let (dev_port, ctl_port) = match initiator {
            Initiator::Device => (DEVICE_PORT_BASE + dev as u16, profile.controller_port),
            Initiator::Controller => (profile.port, CONTROLLER_PORT_BASE + dev as u16),
        };
        let mut ts = start;
        for (by_init, flags, length, mult) in pk {
            if mult > 0.0 {
                let u: f64 = self.rng.random_range(-1.0..=1.0);
                ts += cfg.timing.packet_gap * mult * stretch * (1.0 + u * cfg.timing.gap_jitter);
            }
            let from_device = by_init == (initiator == Initiator::Device);
            let (src_addr, dst_addr, src_port, dst_port, direction) = if from_device {
                (spec.addr, cfg.controller_addr, dev_port, ctl_port, Direction::DeviceToController)
            } else {
                (cfg.controller_addr, spec.addr, ctl_port, dev_port, Direction::ControllerToDevice)
            };
            self.records.push(PacketRecord {
                ts,
                src_addr,
                dst_addr,
                src_port,
                dst_port,
                proto,
                length,
                tcp_flags: flags,
                direction,
            });
        }
        ts
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &mut self,
        tick: u64,
        ts: f64,
        dev: usize,
        event: &str,
        cause: Option<u64>,
        tree: Option<u64>,
        value: Option<DeviceState>,
        state_after: DeviceState,
        kind: Option<AnomalyKind>,
        wire: bool,
    ) -> u64 {
        let id = self.ledger.len() as u64;
        self.ledger.push(LedgerEntry {
            id,
            tick,
            ts,
            device: self.cfg.devices[dev].id.clone(),
            event: event.to_string(),
            cause,
            tree,
            value,
            state_after,
            label: if kind.is_some() { Label::Anomalous } else { Label::Benign },
            kind,
            wire,
        });
        id
    }

    fn outcome(&mut self, idx: usize, inj: &InjectedAnomaly, events: Vec<u64>, suppressed: bool) -> usize {
        self.outcomes.push(InjectionOutcome {
            index: idx,
            kind: inj.kind,
            target: inj.target.clone(),
            tick: inj.tick,
            events,
            suppressed,
            affected_events: Vec::new(),
            affected_devices: Vec::new(),
        });
        self.outcomes.len() - 1
    }

    /// Action event of `dev` for GHOST_COMMAND / EVENT_LOSS: prefer one
    /// that actually changes the state.
    fn state_changing_action(&self, dev: usize, inj: &InjectedAnomaly) -> String {
        if let Some(e) = &inj.event {
            return e.clone();
        }
        let spec = &self.cfg.devices[dev];
        let current = &self.world.states[&spec.id];
        let profile = self.cfg.profile_of(spec);
        profile
            .events
            .iter()
            .filter(|(_, e)| e.initiator == Initiator::Controller)
            .find(|(_, e)| matches!(&e.effect, Effect::Set(s) if s != current))
            .map(|(k, _)| k.clone())
            .unwrap_or_else(|| self.cfg.default_event(spec, inj.kind).expect("validated").to_string())
    }

    fn event_loss(&mut self, idx: usize, inj: &InjectedAnomaly, t: u64) {
        let dev = self.index_of(&inj.target);
        let event = self.state_changing_action(dev, inj);
        let ep = self.cfg.event_profile(&self.cfg.devices[dev], &event).expect("validated").clone();
        let value = self.draw_value(&ep);
        let state = self.apply_effect(dev, &ep.effect, value.as_ref());
        let id = self.record(t, self.tick_ts(t), dev, &event, None, None, value, state, Some(inj.kind), false);
        self.outcome(idx, inj, vec![id], true);
    }

    /// GHOST_COMMAND, COMMAND_FAILURE, DELAYED_UPDATE or FALSE_READING at
    /// free tick `t`; returns the tick the exchange (or tree) ends in.
    fn standalone(&mut self, idx: usize, inj: &InjectedAnomaly, t: u64) -> Result<u64, SimError> {
        let dev = self.index_of(&inj.target);
        let spec = &self.cfg.devices[dev];
        match inj.kind {
            AnomalyKind::GhostCommand | AnomalyKind::CommandFailure => {
                let ghost = inj.kind == AnomalyKind::GhostCommand;
                let event = if ghost {
                    self.state_changing_action(dev, inj)
                } else {
                    inj.event
                        .clone()
                        .unwrap_or_else(|| self.cfg.default_event(spec, inj.kind).expect("validated").to_string())
                };
                let ep = self.cfg.event_profile(spec, &event).expect("validated").clone();
                let ts = self.tick_ts(t);
                let (init, shape) = if ghost {
                    (Initiator::Device, Shape::Ghost)
                } else {
                    (Initiator::Controller, Shape::CommandFailure)
                };
                let end = self.exchange(dev, &ep, init, shape, ts);
                let (value, state) = if ghost {
                    let v = self.draw_value(&ep);
                    let s = self.apply_effect(dev, &ep.effect, v.as_ref());
                    (v, s)
                } else {
                    (None, self.world.states[&spec.id].clone())
                };
                let id = self.record(t, ts, dev, &event, None, None, value, state, Some(inj.kind), true);
                self.outcome(idx, inj, vec![id], false);
                Ok(self.tick_after(end))
            }
            AnomalyKind::DelayedUpdate | AnomalyKind::FalseReading => {
                let event = inj
                    .event
                    .clone()
                    .unwrap_or_else(|| self.cfg.default_event(spec, inj.kind).expect("validated").to_string());
                self.run_tree(dev, &event, t, Some((idx, inj)), None)
            }
            AnomalyKind::EventLoss | AnomalyKind::CompromisedInteraction => unreachable!("handled by the scheduler"),
        }
    }

    /// Emits a tree rooted at a reading of `root` at tick `t`, BFS over the
    /// rules. Returns the tick after the last exchange.
    fn run_tree(
        &mut self,
        root: usize,
        root_event: &str,
        t: u64,
        perturb: Option<(usize, &InjectedAnomaly)>,
        compromise: Option<(usize, &InjectedAnomaly)>,
    ) -> Result<u64, SimError> {
        let tree = self.trees;
        self.trees += 1;
        let cfg = self.cfg;
        let spec = &cfg.devices[root];
        let ep = cfg.event_profile(spec, root_event).expect("validated").clone();

        let mut value = self.draw_value(&ep);
        let mut shape = Shape::Normal;
        let mut start_tick = t;
        let mut kind = None;
        if let Some((_, inj)) = perturb {
            kind = Some(inj.kind);
            match inj.kind {
                AnomalyKind::DelayedUpdate => {
                    shape = Shape::Delayed;
                    start_tick = t + inj.delay_ticks.expect("validated");
                }
                AnomalyKind::FalseReading => {
                    shape = Shape::FalseReading;
                    value = inj.value.clone();
                }
                _ => unreachable!(),
            }
        }
        let ts = self.tick_ts(start_tick);
        let end = self.exchange(root, &ep, Initiator::Device, shape, ts);
        let state = self.apply_effect(root, &ep.effect, value.as_ref());
        let root_id = self.record(t, ts, root, root_event, None, Some(tree), value.clone(), state, kind, true);
        if let Some((idx, inj)) = perturb {
            self.outcome(idx, inj, vec![root_id], false);
        }

        let mut nodes = vec![Node {
            ledger: root_id,
            dev: root,
            event: root_event.to_string(),
            value,
        }];
        let mut in_tree: HashSet<usize> = HashSet::from([root]);
        let mut cursor = self.tick_after(end);
        let mut queue: VecDeque<usize> = VecDeque::new();

        let mut injected = None;
        if let Some((idx, inj)) = compromise {
            let target = self.index_of(&inj.target);
            let event = self.compromise_event(inj);
            let (id, end) = self.emit_action(target, &event, cursor, root_id, tree, Some(inj.kind));
            cursor = self.tick_after(end);
            in_tree.insert(target);
            let value = self.ledger[id as usize].value.clone();
            nodes.push(Node {
                ledger: id,
                dev: target,
                event,
                value,
            });
            queue.push_back(1);
            self.compromised.insert(target);
            injected = Some((self.outcome(idx, inj, vec![id], false), id));
        }
        queue.push_back(0);

        while let Some(n) = queue.pop_front() {
            let dev_id = cfg.devices[nodes[n].dev].id.clone();
            let event = nodes[n].event.clone();
            let fired: Vec<usize> = self
                .rules
                .rules()
                .iter()
                .enumerate()
                .filter(|(_, r)| r.trigger_matches(&dev_id, &event, &self.world))
                .map(|(i, _)| i)
                .collect();
            for ri in fired {
                let rule = &self.rules.rules()[ri];
                let action_event = rule.action.event.clone();
                let targets: Vec<usize> = cfg.select(&rule.action.device).map(|(i, _)| i).collect();
                for target in targets {
                    if in_tree.contains(&target) {
                        continue;
                    }
                    let rule = &self.rules.rules()[ri];
                    // conditions are evaluated when the child is about to fire
                    if !rule.condition.as_ref().is_none_or(|c| c.eval(nodes[n].value.as_ref(), &self.world)) {
                        continue;
                    }
                    let target_id = &cfg.devices[target].id;
                    let parent = nodes
                        .iter()
                        .position(|p| {
                            self.rules
                                .licensing_rule(
                                    (&cfg.devices[p.dev].id, &p.event, p.value.as_ref()),
                                    (target_id, &action_event),
                                    &self.world,
                                )
                                .is_some()
                        })
                        .unwrap_or(n);
                    let (id, end) = self.emit_action(target, &action_event, cursor, nodes[parent].ledger, tree, None);
                    cursor = self.tick_after(end);
                    in_tree.insert(target);
                    let value = self.ledger[id as usize].value.clone();
                    nodes.push(Node {
                        ledger: id,
                        dev: target,
                        event: action_event.clone(),
                        value,
                    });
                    queue.push_back(nodes.len() - 1);
                }
            }
        }

        if let Some((oi, id)) = injected {
            let sub = self.subtree(id);
            self.outcomes[oi].affected_devices = sub.iter().map(|&e| self.ledger[e as usize].device.clone()).collect();
            self.outcomes[oi].affected_events = sub;
        }
        Ok(cursor)
    }

    fn emit_action(
        &mut self,
        dev: usize,
        event: &str,
        tick: u64,
        cause: u64,
        tree: u64,
        kind: Option<AnomalyKind>,
    ) -> (u64, f64) {
        let ep = self.cfg.event_profile(&self.cfg.devices[dev], event).expect("validated").clone();
        let ts = self.tick_ts(tick);
        let end = self.exchange(dev, &ep, Initiator::Controller, Shape::Normal, ts);
        let value = self.draw_value(&ep);
        let state = self.apply_effect(dev, &ep.effect, value.as_ref());
        let id = self.record(tick, ts, dev, event, Some(cause), Some(tree), value, state, kind, true);
        (id, end)
    }

    /// Ledger ids of `root` and its causal descendants, depth first.
    fn subtree(&self, root: u64) -> Vec<u64> {
        let mut out = Vec::new();
        let mut todo = vec![root];
        while let Some(id) = todo.pop() {
            out.push(id);
            let mut kids: Vec<u64> = self.ledger.iter().filter(|e| e.cause == Some(id)).map(|e| e.id).collect();
            kids.reverse();
            todo.extend(kids);
        }
        out
    }

    fn finish(mut self) -> SimOutput {
        let mut label_counts = ClassCounts::default();
        let mut packet_label_counts = ClassCounts::default();
        let mut kind_counts = BTreeMap::new();
        for e in &self.ledger {
            match e.label {
                Label::Benign => label_counts.benign += 1,
                Label::Anomalous => label_counts.anomalous += 1,
            }
            if e.wire {
                match e.packet_label() {
                    Label::Benign => packet_label_counts.benign += 1,
                    Label::Anomalous => packet_label_counts.anomalous += 1,
                }
            }
            if let Some(k) = e.kind {
                *kind_counts.entry(k).or_insert(0) += 1;
            }
        }
        self.outcomes.sort_by_key(|o| o.index);
        // stable sort keeps emission order for equal timestamps
        self.records.sort_by(|a, b| a.ts.total_cmp(&b.ts));
        let truth = GroundTruth {
            schema: super::config::SCHEMA_VERSION,
            seed: self.cfg.seed,
            tick_seconds: self.cfg.tick_seconds,
            event_count: self.ledger.len(),
            label_counts,
            packet_label_counts,
            kind_counts,
            injections: self.outcomes,
            final_states: self.world.states,
        };
        SimOutput {
            records: self.records,
            ledger: self.ledger,
            truth,
        }
    }
}
