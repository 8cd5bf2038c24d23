use super::*;
use crate::events::{build_signatures, segment_bursts, SignatureConfig, DEFAULT_GAP_THRESHOLD};
use crate::interaction::DeviceStatus;
use crate::models::{ModelKind, TrainParams};
use crate::sim::{self, presets, AnomalyKind, InjectedAnomaly, ScenarioConfig, SimOutput};
use crate::types::{DeviceId, DeviceState, Validation};

struct Run {
    cfg: ScenarioConfig,
    out: SimOutput,
    bursts: Vec<Burst>,
    sigs: SignatureSet,
    rules: RuleSet,
    feed: StatusFeed,
}

fn run(cfg: ScenarioConfig) -> Run {
    let out = sim::run_scenario(&cfg).unwrap();
    let bursts = segment_bursts(&out.records, &cfg.trace_meta(), DEFAULT_GAP_THRESHOLD);
    let named = sim::named_bursts(&bursts, &out.ledger, cfg.tick_seconds).unwrap();
    let sigs = SignatureSet::new(build_signatures(&named, &SignatureConfig::default()).unwrap());
    let feed = StatusFeed::from_ledger(&out.ledger, cfg.tick_seconds);
    Run {
        rules: cfg.rule_set(),
        cfg,
        out,
        bursts,
        sigs,
        feed,
    }
}

impl Run {
    fn replay<'a>(&'a self, model: Option<&'a Model>) -> Controller<'a> {
        replay(ReplayInputs {
            bursts: &self.bursts,
            registry: self.cfg.registry(),
            rules: &self.rules,
            signatures: &self.sigs,
            model,
            feed: Some(&self.feed),
            params: ControllerParams::default(),
        })
        .unwrap()
    }
}

fn compromise(target: &str, event: &str, tick: u64) -> InjectedAnomaly {
    InjectedAnomaly {
        kind: AnomalyKind::CompromisedInteraction,
        target: DeviceId::from(target),
        tick,
        event: Some(event.into()),
        delay_ticks: None,
        value: None,
    }
}

#[test]
fn benign_motion_builds_one_valid_tree_per_reading() {
    let r = run(presets::motion_bulb(600));
    let c = r.replay(None);
    let motions = r.out.ledger.iter().filter(|e| e.event == "motion_detected").count();
    assert_eq!(c.trees, motions);
    assert_eq!(c.count(Outcome::Root), motions);
    assert_eq!(c.count(Outcome::Attached), motions);
    assert_eq!(c.count(Outcome::InteractionAnomaly), 0);
    assert!(c.rollbacks.is_empty());
    assert_eq!(c.max_depth, 1);
    let log = &c.interaction_log[&DeviceId::from("M1")];
    assert!(log.contains("L1"), "{log}");
    // keys are dense per root device
    let keys: Vec<String> = c.verdicts.iter().filter_map(|v| v.key.clone()).collect();
    assert_eq!(keys[0], "M1/1.1");
    assert_eq!(keys[1], "M1/1.2");
    assert_eq!(keys[2], "M1/2.1");
}

#[test]
fn compromised_action_is_rolled_back_and_isolated() {
    let mut cfg = presets::motion_bulb(600);
    cfg.injections = vec![compromise("L1", "turn_off", 200)];
    let r = run(cfg);
    let c = r.replay(None);
    assert_eq!(c.count(Outcome::InteractionAnomaly), 1);
    assert_eq!(c.rollbacks.len(), 1);
    let rb = &c.rollbacks[0];
    assert_eq!(rb.report.isolate.as_str(), "L1");
    assert!(rb.report.all_restored());
    // the bulb was on from the previous motion, and goes back on
    assert_eq!(rb.snapshot[&DeviceId::from("L1")], DeviceState::Bool(true));
    assert_eq!(c.registry.get(&DeviceId::from("L1")).unwrap().status, DeviceStatus::Isolated);
    // later bulb actions are rejected, not attached
    assert!(c.count(Outcome::Rejected) > 0);
    let log = c.logs.get(&DeviceId::from("L1")).unwrap();
    let bad = log.entries().iter().find(|e| e.verdict == Validation::Anomalous).unwrap();
    assert!(bad.rolled_back);
}

#[test]
fn replay_is_deterministic() {
    let r = run(presets::random_scenario(3, 20_000));
    let a = r.replay(None);
    let b = r.replay(None);
    assert_eq!(a.verdicts, b.verdicts);
    assert_eq!(a.registry, b.registry);
    let plans = |c: &Controller| c.rollbacks.iter().map(|x| x.plan.clone()).collect::<Vec<_>>();
    assert_eq!(plans(&a), plans(&b));
}

#[test]
fn ghost_commands_are_terminated_by_signatures_alone() {
    let mut cfg = presets::motion_bulb(600);
    cfg.injections = vec![InjectedAnomaly {
        kind: AnomalyKind::GhostCommand,
        target: DeviceId::from("L1"),
        tick: 150,
        event: None,
        delay_ticks: None,
        value: None,
    }];
    let r = run(cfg);
    let c = r.replay(None);
    assert_eq!(c.count(Outcome::PacketAnomaly), 1);
    let v = c.verdicts.iter().find(|v| v.outcome == Outcome::PacketAnomaly).unwrap();
    assert_eq!(v.device.as_str(), "L1");
    assert!(c.rollbacks.is_empty());
}

#[test]
fn detect_discards_flagged_events() {
    let r = run(presets::s0(5, 40_000));
    let ds = sim::label_dataset(&r.bursts, &r.out.ledger, r.cfg.tick_seconds).unwrap();
    let model = Model::train(ModelKind::Knn, &ds, &TrainParams::default()).unwrap();
    let d = detect(&r.bursts, &r.sigs, &model).unwrap();
    assert_eq!(d.labels.len(), r.bursts.len());
    assert_eq!(d.anomalies(), 0);
    assert!(d.events.iter().all(Option::is_some));
    let discarded: usize = d
        .logs
        .iter()
        .map(|(_, l)| l.entries().iter().filter(|e| e.discarded).count())
        .sum();
    assert_eq!(discarded, d.anomalies());
}

#[test]
fn feed_lookup_is_nearest_within_half_tick() {
    let r = run(presets::motion_bulb(100));
    let first = r.out.ledger.iter().find(|e| e.event == "turn_on").unwrap();
    let hit = r.feed.lookup(&first.device, first.ts + 0.04).unwrap();
    assert_eq!(hit.ts, first.ts);
    assert!(r.feed.lookup(&first.device, first.ts + 0.06).is_none());
    assert!(r.feed.lookup(&DeviceId::from("nope"), first.ts).is_none());
}

#[test]
fn bench_needs_a_thousand_events() {
    let r = run(presets::motion_bulb(300));
    let err = bench(ReplayInputs {
        bursts: &r.bursts,
        registry: r.cfg.registry(),
        rules: &r.rules,
        signatures: &r.sigs,
        model: None,
        feed: None,
        params: ControllerParams::default(),
    })
    .err()
    .unwrap();
    assert_eq!(err.code(), "bench.INSUFFICIENT_EVENTS");
    assert_eq!(err.exit_code(), 7);
}

#[test]
fn error_classes_map_to_stable_exit_codes() {
    let io = PipelineError::io("x", std::io::Error::from(std::io::ErrorKind::NotFound));
    assert_eq!((io.code().as_str(), io.exit_code()), ("io.IO", 3));
    let e: PipelineError = ModelError::DimensionMismatch { expected: 12, got: 3 }.into();
    assert_eq!((e.code().as_str(), e.exit_code()), ("models.DIMENSION_MISMATCH", 6));
    let e: PipelineError = ModelError::UnknownKind("svm".into()).into();
    assert_eq!(e.exit_code(), 4);
    let e: PipelineError = TraceError::Parse { line: 3, reason: "x".into() }.into();
    assert_eq!((e.code().as_str(), e.exit_code()), ("trace.PARSE_ERROR", 5));
    let e: PipelineError = SimError::InvalidConfig {
        path: "seed".into(),
        reason: "x".into(),
    }
    .into();
    assert_eq!((e.code().as_str(), e.exit_code()), ("sim.INVALID_CONFIG", 4));
    let e: PipelineError = RollbackError::InvalidPlan("x".into()).into();
    assert_eq!(e.exit_code(), 8);
    let e: PipelineError = TraceError::io("t", std::io::Error::from(std::io::ErrorKind::NotFound)).into();
    assert_eq!(e.exit_code(), 3);
}
