use std::collections::{BTreeMap, BTreeSet};

use homewatch::events::{build_signatures, segment_bursts, SignatureConfig, SignatureSet, DEFAULT_GAP_THRESHOLD};
use homewatch::pipeline::{replay, ControllerParams, Outcome, ReplayInputs, StatusFeed};
use homewatch::sim::{label_dataset, named_bursts, presets, run_scenario, AnomalyKind};

#[test]
fn s1_matches_its_description() {
    let c = presets::s1();
    assert_eq!(c.seed, 42);
    assert_eq!(c.devices.len(), 12);
    let events: BTreeSet<&str> = c
        .devices
        .iter()
        .flat_map(|d| c.profile_of(d).events.keys().map(String::as_str))
        .collect();
    assert!(events.len() >= 20, "{} event types", events.len());
    let out = run_scenario(&c).unwrap();
    assert!(out.ledger.len() >= 10_000);
    let share = out.truth.label_counts.anomalous as f64 / out.ledger.len() as f64;
    assert!((0.09..=0.12).contains(&share), "{share}");
}

#[test]
fn s1_labels_equal_injection_bookkeeping() {
    let c = presets::s1();
    let out = run_scenario(&c).unwrap();
    let t = &out.truth;

    let mut by_kind: BTreeMap<AnomalyKind, usize> = BTreeMap::new();
    for e in out.ledger.iter().filter(|e| e.kind.is_some()) {
        *by_kind.entry(e.kind.unwrap()).or_default() += 1;
    }
    assert_eq!(by_kind, t.kind_counts);
    assert_eq!(t.label_counts.anomalous, by_kind.values().sum::<usize>());
    assert_eq!(t.label_counts.benign + t.label_counts.anomalous, out.ledger.len());

    let booked: BTreeSet<u64> = t.injections.iter().flat_map(|o| o.events.iter().copied()).collect();
    let labeled: BTreeSet<u64> = out.ledger.iter().filter(|e| e.label.is_anomalous()).map(|e| e.id).collect();
    assert_eq!(booked, labeled);
    assert_eq!(t.injections.len(), c.injections.len());
    assert!(t.injections.iter().all(|o| !o.events.is_empty() || o.suppressed));

    // one dataset row per burst, with the wire-level classes
    let bursts = segment_bursts(&out.records, &c.trace_meta(), DEFAULT_GAP_THRESHOLD);
    let ds = label_dataset(&bursts, &out.ledger, c.tick_seconds).unwrap();
    let (benign, anomalous) = ds.class_counts();
    assert_eq!(benign, t.packet_label_counts.benign);
    assert_eq!(anomalous, t.packet_label_counts.anomalous);
}

#[test]
fn injected_anomalies_are_visible_and_propagate() {
    let c = presets::s1();
    let out = run_scenario(&c).unwrap();
    let bursts = segment_bursts(&out.records, &c.trace_meta(), DEFAULT_GAP_THRESHOLD);

    // signatures from an injection-free run of the same home
    let mut benign = c.clone();
    benign.injections.clear();
    let bo = run_scenario(&benign).unwrap();
    let bb = segment_bursts(&bo.records, &c.trace_meta(), DEFAULT_GAP_THRESHOLD);
    let named = named_bursts(&bb, &bo.ledger, c.tick_seconds).unwrap();
    let sigs = SignatureSet::new(build_signatures(&named, &SignatureConfig::default()).unwrap());

    let rules = c.rule_set();
    let feed = StatusFeed::from_ledger(&out.ledger, c.tick_seconds);
    let ctl = replay(ReplayInputs {
        bursts: &bursts,
        registry: c.registry(),
        rules: &rules,
        signatures: &sigs,
        model: None,
        feed: Some(&feed),
        params: ControllerParams::default(),
    })
    .unwrap();

    for o in out.truth.injections.iter().filter(|o| o.kind == AnomalyKind::GhostCommand) {
        let e = out.ledger.iter().find(|e| e.id == o.events[0]).unwrap();
        assert!(
            ctl.verdicts.iter().any(|v| v.device == e.device
                && (v.ts - e.ts).abs() < c.tick_seconds / 2.0
                && v.outcome == Outcome::PacketAnomaly),
            "ghost on {} at {} not flagged",
            e.device,
            e.ts
        );
    }

    let compromises: Vec<_> = out
        .truth
        .injections
        .iter()
        .filter(|o| o.kind == AnomalyKind::CompromisedInteraction)
        .collect();
    assert_eq!(ctl.rollbacks.len(), compromises.len());
    for o in compromises {
        let e = out.ledger.iter().find(|e| e.id == o.events[0]).unwrap();
        if presets::has_downstream(&c, &e.device, &e.event) {
            assert!(o.affected_events.len() >= 2, "{o:?}");
        }
        assert!(ctl.rollbacks.iter().any(|r| r.report.isolate == o.target));
    }
}
