use std::collections::{BTreeMap, HashMap, VecDeque};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::events::{featurize, Burst, EventLogs, EventRecord, EventType, SignatureSet};
use crate::interaction::{new_tree, InteractionTree, Registry, RuleSet};
use crate::models::Model;
use crate::rollback::{execute_rollback, plan_rollback, LoggingActuator, RollbackPlan, RollbackReport};
use crate::sim::LedgerEntry;
use crate::types::{DeviceId, DeviceState, EventKey, Label, Validation};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerParams {
    /// A tree closes once nothing attached to it for this long, seconds.
    pub quiescence: f64,
    /// How far back a terminated event can still explain an action, seconds.
    pub causal_window: f64,
}

impl Default for ControllerParams {
    fn default() -> Self {
        Self {
            quiescence: 5.0,
            causal_window: 2.0,
        }
    }
}

/// Value and resulting state a device reported for one of its events.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedEntry {
    pub ts: f64,
    pub value: Option<DeviceState>,
    pub state_after: DeviceState,
}

/// Device status updates, looked up by device and event time.
#[derive(Debug, Clone, Default)]
pub struct StatusFeed {
    entries: HashMap<DeviceId, Vec<FeedEntry>>,
    tolerance: f64,
}

impl StatusFeed {
    /// Status updates of every wire event in a simulator ledger.
    pub fn from_ledger(ledger: &[LedgerEntry], tick_seconds: f64) -> Self {
        let mut entries: HashMap<DeviceId, Vec<FeedEntry>> = HashMap::new();
        for e in ledger.iter().filter(|e| e.wire) {
            entries.entry(e.device.clone()).or_default().push(FeedEntry {
                ts: e.ts,
                value: e.value.clone(),
                state_after: e.state_after.clone(),
            });
        }
        for v in entries.values_mut() {
            v.sort_by(|a, b| a.ts.total_cmp(&b.ts));
        }
        Self {
            entries,
            tolerance: tick_seconds / 2.0,
        }
    }

    pub fn lookup(&self, device: &DeviceId, ts: f64) -> Option<&FeedEntry> {
        let list = self.entries.get(device)?;
        let pos = list.partition_point(|e| e.ts < ts);
        list[pos.saturating_sub(1)..(pos + 1).min(list.len())]
            .iter()
            .filter(|e| (e.ts - ts).abs() <= self.tolerance)
            .min_by(|a, b| (a.ts - ts).abs().total_cmp(&(b.ts - ts).abs()))
    }
}

/// What the controller did with a burst.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    /// Reading that opened a tree.
    Root,
    /// Action attached and licensed.
    Attached,
    /// Action attached without a licensing rule.
    InteractionAnomaly,
    /// Terminated by the packet-level model.
    PacketAnomaly,
    /// Footprint matched no signature; the model let it pass.
    Unknown,
    /// Action with no event that could have caused it.
    Orphan,
    /// Action caused by a terminated event.
    Cascade,
    /// Event of an isolated device.
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstVerdict {
    pub burst: usize,
    pub device: DeviceId,
    pub ts: f64,
    pub event: Option<String>,
    pub label: Label,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
}

/// An executed rollback with the registry right after it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RollbackRecord {
    pub plan: RollbackPlan,
    pub report: RollbackReport,
    /// Start of the burst whose arrival closed the tree; `None` at end of trace.
    pub cutoff: Option<f64>,
    pub snapshot: BTreeMap<DeviceId, DeviceState>,
}

struct OpenTree {
    tree: InteractionTree,
    last_attach: f64,
    node_ts: BTreeMap<EventKey, f64>,
    /// Timing sample of each attached interaction.
    samples: HashMap<EventKey, usize>,
}

struct Terminated {
    ts: f64,
    device: DeviceId,
    event: Option<String>,
    value: Option<DeviceState>,
}

enum Candidate {
    Node(usize, EventKey),
    Terminated(usize),
}

/// Replays bursts through signature matching, packet screening, tree
/// building, validation and rollback.
pub struct Controller<'a> {
    params: ControllerParams,
    rules: &'a RuleSet,
    signatures: &'a SignatureSet,
    model: Option<&'a Model>,
    feed: Option<&'a StatusFeed>,
    pub registry: Registry,
    pub logs: EventLogs,
    open: Vec<OpenTree>,
    terminated: VecDeque<Terminated>,
    pub verdicts: Vec<BurstVerdict>,
    pub rollbacks: Vec<RollbackRecord>,
    /// Rendered trees per root device.
    pub interaction_log: BTreeMap<DeviceId, String>,
    pub trees: usize,
    pub max_depth: usize,
    /// Signature match plus model prediction per burst.
    pub inference_ms: Vec<f64>,
    /// Attribution and validation per attached interaction, plus rollback
    /// planning for anomalous ones.
    pub validate_plan_ms: Vec<f64>,
    actuator: LoggingActuator,
}

impl<'a> Controller<'a> {
    pub fn new(
        registry: Registry,
        rules: &'a RuleSet,
        signatures: &'a SignatureSet,
        model: Option<&'a Model>,
        feed: Option<&'a StatusFeed>,
        params: ControllerParams,
    ) -> Self {
        Self {
            params,
            rules,
            signatures,
            model,
            feed,
            registry,
            logs: EventLogs::new(),
            open: Vec::new(),
            terminated: VecDeque::new(),
            verdicts: Vec::new(),
            rollbacks: Vec::new(),
            interaction_log: BTreeMap::new(),
            trees: 0,
            max_depth: 0,
            inference_ms: Vec::new(),
            validate_plan_ms: Vec::new(),
            actuator: LoggingActuator::default(),
        }
    }

    pub fn run(&mut self, bursts: &[Burst]) -> Result<(), PipelineError> {
        for (i, b) in bursts.iter().enumerate() {
            self.process(i, b)?;
        }
        self.finish()
    }

    pub fn count(&self, outcome: Outcome) -> usize {
        self.verdicts.iter().filter(|v| v.outcome == outcome).count()
    }

    /// Closes every tree quiet since `now`.
    fn close_quiet(&mut self, now: f64) -> Result<(), PipelineError> {
        let mut i = 0;
        while i < self.open.len() {
            if self.open[i].last_attach + self.params.quiescence <= now {
                let t = self.open.remove(i);
                self.finalize(t, Some(now))?;
            } else {
                i += 1;
            }
        }
        Ok(())
    }

    pub fn finish(&mut self) -> Result<(), PipelineError> {
        for t in std::mem::take(&mut self.open) {
            self.finalize(t, None)?;
        }
        Ok(())
    }

    fn finalize(&mut self, mut open: OpenTree, cutoff: Option<f64>) -> Result<(), PipelineError> {
        open.tree.finalize();
        let tree = &open.tree;
        self.max_depth = self.max_depth.max(tree.depth());
        // topmost anomalous nodes; their subtrees cover the rest
        let anomalous: Vec<EventKey> = tree
            .nodes()
            .filter(|n| n.validation == Validation::Anomalous)
            .filter(|n| {
                let mut cur = n.parent;
                while let Some(p) = cur {
                    let pn = tree.node(&p).expect("parent exists");
                    if pn.validation == Validation::Anomalous {
                        return false;
                    }
                    cur = pn.parent;
                }
                true
            })
            .map(|n| n.key)
            .collect();
        for key in anomalous {
            let start = Instant::now();
            let plan = plan_rollback(tree, &key, &self.logs, &self.registry)?;
            let ms = start.elapsed().as_secs_f64() * 1e3;
            if let Some(&s) = open.samples.get(&key) {
                self.validate_plan_ms[s] += ms;
            }
            let report = execute_rollback(&plan, &mut self.actuator, &mut self.registry, &mut self.logs)?;
            self.rollbacks.push(RollbackRecord {
                plan,
                report,
                cutoff,
                snapshot: self.registry.snapshot(),
            });
        }
        self.interaction_log
            .entry(tree.root_device.clone())
            .or_default()
            .push_str(&tree.render_log());
        Ok(())
    }

    fn record(&mut self, burst: usize, b: &Burst, event: Option<&str>) -> Result<usize, PipelineError> {
        let ty = event.map_or(EventType::AnomalyCandidate, EventType::known);
        Ok(self.logs.append(EventRecord::new(b.device_id.clone(), ty, b.start_ts).with_burst(burst))?)
    }

    fn verdict(&mut self, burst: usize, b: &Burst, event: Option<&str>, label: Label, outcome: Outcome, key: Option<String>) {
        self.verdicts.push(BurstVerdict {
            burst,
            device: b.device_id.clone(),
            ts: b.start_ts,
            event: event.map(str::to_string),
            label,
            outcome,
            key,
        });
    }

    fn terminate(&mut self, b: &Burst, event: Option<&str>, value: Option<DeviceState>, log_index: usize) {
        self.logs.log_mut(&b.device_id).mark_discarded(log_index);
        self.terminated.push_back(Terminated {
            ts: b.start_ts,
            device: b.device_id.clone(),
            event: event.map(str::to_string),
            value,
        });
    }

    /// Applies the reported state (or keeps the current one) and stores it
    /// on the log entry.
    fn apply_state(&mut self, device: &DeviceId, reported: Option<&DeviceState>, log_index: usize) -> Result<(), PipelineError> {
        if let Some(s) = reported {
            self.registry.set_state(device, s.clone())?;
        }
        let state = self.registry.require(device)?.state.clone();
        self.logs.log_mut(device).set_state_after(log_index, state);
        Ok(())
    }

    pub fn process(&mut self, idx: usize, b: &Burst) -> Result<(), PipelineError> {
        let now = b.start_ts;
        self.close_quiet(now)?;
        while self.terminated.front().is_some_and(|t| now - t.ts > self.params.causal_window) {
            self.terminated.pop_front();
        }

        let start = Instant::now();
        let fv = featurize(b);
        let sig = self.signatures.match_features(&fv, &b.device_id);
        let label = match self.model {
            Some(m) => m.predict(&fv),
            None if sig.is_some() => Label::Benign,
            None => Label::Anomalous,
        };
        self.inference_ms.push(start.elapsed().as_secs_f64() * 1e3);

        let event = sig.map(|s| s.event_type.clone());
        let ev = event.as_deref();
        let feed = self.feed.and_then(|f| f.lookup(&b.device_id, now));
        let value = feed.and_then(|f| f.value.clone());
        let reported = feed.map(|f| f.state_after.clone());
        let li = self.record(idx, b, ev)?;

        if label == Label::Anomalous {
            self.terminate(b, ev, value, li);
            self.verdict(idx, b, ev, label, Outcome::PacketAnomaly, None);
            return Ok(());
        }
        let Some(ev) = ev else {
            self.verdict(idx, b, None, label, Outcome::Unknown, None);
            return Ok(());
        };
        if !self.registry.require(&b.device_id)?.is_active() {
            self.terminate(b, Some(ev), value, li);
            self.verdict(idx, b, Some(ev), label, Outcome::Rejected, None);
            return Ok(());
        }

        if b.device_initiated() {
            let mut tree = new_tree(&mut self.registry, &b.device_id, ev, value)?;
            let key = tree.root_key;
            tree.set_validation(&key, Validation::Valid)?;
            let node = tree.node_ref(key);
            self.logs.log_mut(&b.device_id).assign_key(li, node.clone())?;
            self.logs.log_mut(&b.device_id).set_verdict(li, Validation::Valid);
            self.apply_state(&b.device_id, reported.as_ref(), li)?;
            self.open.push(OpenTree {
                tree,
                last_attach: now,
                node_ts: BTreeMap::from([(key, now)]),
                samples: HashMap::new(),
            });
            self.trees += 1;
            self.verdict(idx, b, Some(ev), label, Outcome::Root, Some(node.to_string()));
            return Ok(());
        }

        let start = Instant::now();
        let Some(parent) = self.attribute(&b.device_id, ev) else {
            self.verdict(idx, b, Some(ev), label, Outcome::Orphan, None);
            return Ok(());
        };
        match parent {
            Candidate::Terminated(_) => {
                self.terminate(b, Some(ev), value, li);
                self.verdict(idx, b, Some(ev), label, Outcome::Cascade, None);
            }
            Candidate::Node(ti, pk) => {
                let open = &mut self.open[ti];
                let key = open.tree.attach_with_value(&pk, &b.device_id, ev, value)?;
                // validated against the state before this event takes effect
                let v = open.tree.judge(&key, self.rules, &self.registry)?;
                open.tree.set_validation(&key, v)?;
                open.last_attach = now;
                open.node_ts.insert(key, now);
                let node = open.tree.node_ref(key);
                open.samples.insert(key, self.validate_plan_ms.len());
                self.validate_plan_ms.push(start.elapsed().as_secs_f64() * 1e3);
                let log = self.logs.log_mut(&b.device_id);
                log.assign_key(li, node.clone())?;
                log.set_verdict(li, v);
                self.apply_state(&b.device_id, reported.as_ref(), li)?;
                let outcome = if v == Validation::Valid {
                    Outcome::Attached
                } else {
                    Outcome::InteractionAnomaly
                };
                self.verdict(idx, b, Some(ev), label, outcome, Some(node.to_string()));
            }
        }
        Ok(())
    }

    /// Earliest candidate with a rule licensing `(device, event)`, else the
    /// most recent candidate.
    fn attribute(&self, device: &DeviceId, event: &str) -> Option<Candidate> {
        let mut cands: Vec<(f64, Candidate)> = Vec::new();
        for (ti, t) in self.open.iter().enumerate() {
            for (k, ts) in &t.node_ts {
                cands.push((*ts, Candidate::Node(ti, *k)));
            }
        }
        for (i, t) in self.terminated.iter().enumerate() {
            cands.push((t.ts, Candidate::Terminated(i)));
        }
        cands.sort_by(|a, b| a.0.total_cmp(&b.0));
        let licensed = |c: &Candidate| -> bool {
            let (dev, ev, val) = match c {
                Candidate::Node(ti, k) => {
                    let n = self.open[*ti].tree.node(k).expect("candidate node");
                    (&n.device_id, Some(n.event_type.as_str()), n.reading_value.as_ref())
                }
                Candidate::Terminated(i) => {
                    let t = &self.terminated[*i];
                    (&t.device, t.event.as_deref(), t.value.as_ref())
                }
            };
            ev.is_some_and(|ev| {
                self.rules
                    .licensing_rule((dev, ev, val), (device, event), &self.registry)
                    .is_some()
            })
        };
        let first = cands.iter().position(|(_, c)| licensed(c));
        match first {
            Some(i) => Some(cands.swap_remove(i).1),
            None => cands.pop().map(|(_, c)| c),
        }
    }
}
