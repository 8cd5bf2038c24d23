//! End-to-end acceptance checks. Each check prints one PASS or FAIL line;
//! the process exits nonzero when any check fails.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use homewatch::events::{build_signatures, segment_bursts, FeatureVector, SignatureConfig, SignatureSet, DEFAULT_GAP_THRESHOLD, FEATURE_COUNT};
use homewatch::interaction::{new_tree, DeviceRecord, InteractionTree, Registry, RuleSet};
use homewatch::models::{
    evaluate, mean, nearest_rank, Autoencoder, DecisionTreeModel, ForestParams, KnnModel, LabeledDataset, Model, ModelKind,
    RandomForestModel, Row, TrainParams, TreeParams,
};
use homewatch::par::Exec;
use homewatch::pipeline::{bench, replay, Controller, ControllerParams, Outcome, ReplayInputs, StatusFeed};
use homewatch::sim::{
    label_dataset, named_bursts, presets, run_scenario, AnomalyKind, Effect, InjectedAnomaly, Initiator, LedgerEntry, ScenarioConfig,
};
use homewatch::trace::{parse_pcap, read_jsonl, write_jsonl, Direction, PacketRecord, Proto, TcpFlags, TraceMeta};
use homewatch::{DeviceId, DeviceState, EventKey, Label};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Labeled {
    cfg: ScenarioConfig,
    ledger: Vec<LedgerEntry>,
    bursts: Vec<homewatch::events::Burst>,
    dataset: LabeledDataset,
    signatures: SignatureSet,
    rules: RuleSet,
}

fn labeled(cfg: ScenarioConfig) -> Labeled {
    let out = run_scenario(&cfg).unwrap();
    let bursts = segment_bursts(&out.records, &cfg.trace_meta(), DEFAULT_GAP_THRESHOLD);
    let dataset = label_dataset(&bursts, &out.ledger, cfg.tick_seconds).unwrap();
    let named = named_bursts(&bursts, &out.ledger, cfg.tick_seconds).unwrap();
    let signatures = SignatureSet::new(build_signatures(&named, &SignatureConfig::default()).unwrap());
    Labeled {
        rules: cfg.rule_set(),
        cfg,
        ledger: out.ledger,
        bursts,
        dataset,
        signatures,
    }
}

fn inputs<'a>(run: &'a Labeled, model: Option<&'a Model>, feed: &'a StatusFeed, signatures: &'a SignatureSet) -> ReplayInputs<'a> {
    ReplayInputs {
        bursts: &run.bursts,
        registry: run.cfg.registry(),
        rules: &run.rules,
        signatures,
        model,
        feed: Some(feed),
        params: ControllerParams::default(),
    }
}

struct Trained {
    s1: Labeled,
    models: Vec<Model>,
}

fn classifier_quality(t: &Trained, elapsed: f64) -> Check {
    let (_, test) = t.s1.dataset.split(0.7, 42);
    let (n, a) = t.s1.dataset.class_counts();
    let mut lines = vec![format!("S1 {} rows ({n} benign, {a} anomalous), train+eval {elapsed:.1}s", n + a)];
    ensure(n + a >= 10_000, || format!("S1 has only {} events", n + a))?;
    for m in &t.models {
        let e = evaluate(m, &test).map_err(|e| e.to_string())?;
        lines.push(format!("{} acc {:.4} prec {:.4} f1 {:.4}", m.kind(), e.accuracy, e.precision, e.f1));
        let ok = match m.kind() {
            ModelKind::Autoenc => e.accuracy >= 0.90,
            _ => e.accuracy >= 0.95 && e.precision >= 0.90 && e.f1 >= 0.90,
        };
        ensure(ok, || format!("{} below target: {e:?}", m.kind()))?;
    }
    ensure(elapsed < 120.0, || format!("train+eval took {elapsed:.1}s"))?;
    Ok(lines.join("; "))
}

fn bench_runs<'a>(t: &'a Trained, feed: &'a StatusFeed) -> Result<Vec<(ModelKind, Controller<'a>)>, String> {
    t.models
        .iter()
        .map(|m| {
            let (c, _) = bench(inputs(&t.s1, Some(m), feed, &t.s1.signatures)).map_err(|e| e.to_string())?;
            Ok((m.kind(), c))
        })
        .collect()
}

fn stats(xs: &[f64]) -> (f64, f64) {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    (mean(&s), nearest_rank(&s, 95.0))
}

fn inference_latency(runs: &[(ModelKind, Controller)], train_rows: usize) -> Check {
    ensure(train_rows <= 20_000, || format!("{train_rows} training rows"))?;
    let mut lines = Vec::new();
    for (kind, c) in runs {
        ensure(c.inference_ms.len() >= 1_000, || format!("{kind}: {} timed events", c.inference_ms.len()))?;
        let (m, p95) = stats(&c.inference_ms);
        lines.push(format!("{kind} mean {m:.4} ms p95 {p95:.4} ms over {}", c.inference_ms.len()));
        ensure(m < 2.12, || format!("{kind} mean inference {m:.4} ms"))?;
    }
    Ok(lines.join("; "))
}

fn validation_latency(runs: &[(ModelKind, Controller)], rules: usize) -> Check {
    ensure(rules <= 100, || format!("{rules} rules"))?;
    let mut lines = vec![format!("{rules} rules")];
    for (kind, c) in runs {
        ensure(c.max_depth <= 5, || format!("{kind}: tree depth {}", c.max_depth))?;
        ensure(!c.validate_plan_ms.is_empty(), || format!("{kind}: nothing validated"))?;
        let (m, p95) = stats(&c.validate_plan_ms);
        lines.push(format!("{kind} mean {m:.4} ms p95 {p95:.4} ms over {} (depth {})", c.validate_plan_ms.len(), c.max_depth));
        ensure(m < 2.0, || format!("{kind} mean validate+plan {m:.4} ms"))?;
    }
    Ok(lines.join("; "))
}

/// Device states from replaying the ledger without `skip`, up to `cutoff`.
fn history_replay(c: &ScenarioConfig, ledger: &[LedgerEntry], skip: &[u64], cutoff: Option<f64>) -> BTreeMap<DeviceId, DeviceState> {
    let mut s: BTreeMap<DeviceId, DeviceState> = c.devices.iter().map(|d| (d.id.clone(), d.initial_state.clone())).collect();
    for e in ledger {
        if cutoff.is_some_and(|t| e.ts >= t) || skip.contains(&e.id) {
            continue;
        }
        let d = c.device(&e.device).unwrap();
        let st = s.get_mut(&e.device).unwrap();
        match &c.event_profile(d, &e.event).unwrap().effect {
            Effect::None => {}
            Effect::Reading => {
                if let Some(v) = &e.value {
                    *st = v.clone()
                }
            }
            Effect::Toggle => {
                if let DeviceState::Bool(b) = st {
                    *b = !*b
                }
            }
            Effect::Set(v) => *st = v.clone(),
        }
    }
    s
}

fn rollback_correctness() -> Check {
    const SCENARIOS: usize = 20;
    const PER_SCENARIO: usize = 10;
    let mut used = 0;
    let mut runs = 0;
    let mut failures = Vec::new();
    let mut seed = 1_000u64;
    while used < SCENARIOS {
        let base = presets::random_scenario(seed, 20_000);
        seed += 1;
        let mut benign = base.clone();
        benign.seed += 7_777;
        let reference = labeled(benign);
        let actions: Vec<(DeviceId, String)> = reference
            .signatures
            .signatures()
            .iter()
            .filter(|s| {
                let p = base.event_profile(base.device(&s.device_id).unwrap(), &s.event_type).unwrap();
                p.initiator == Initiator::Controller && matches!(p.effect, Effect::Set(_) | Effect::Toggle)
            })
            .map(|s| (s.device_id.clone(), s.event_type.clone()))
            .collect();
        if actions.is_empty() {
            continue;
        }
        used += 1;
        let rules = base.rule_set();
        let meta = base.trace_meta();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..PER_SCENARIO {
            runs += 1;
            let (dev, ev) = actions.choose(&mut rng).unwrap().clone();
            let mut c = base.clone();
            let tick = rng.random_range(1_000..15_000);
            c.injections = vec![InjectedAnomaly {
                kind: AnomalyKind::CompromisedInteraction,
                target: dev.clone(),
                tick,
                event: Some(ev.clone()),
                delay_ticks: None,
                value: None,
            }];
            let tag = format!("seed {} {dev}/{ev}@{tick}", seed - 1);
            let out = match run_scenario(&c) {
                Ok(o) => o,
                Err(e) => {
                    failures.push(format!("{tag}: {e}"));
                    continue;
                }
            };
            let bursts = segment_bursts(&out.records, &meta, DEFAULT_GAP_THRESHOLD);
            let feed = StatusFeed::from_ledger(&out.ledger, c.tick_seconds);
            let ctl = replay(ReplayInputs {
                bursts: &bursts,
                registry: c.registry(),
                rules: &rules,
                signatures: &reference.signatures,
                model: None,
                feed: Some(&feed),
                params: ControllerParams::default(),
            })
            .map_err(|e| e.to_string())?;
            if ctl.rollbacks.len() != 1 {
                failures.push(format!("{tag}: {} rollbacks", ctl.rollbacks.len()));
                continue;
            }
            let rb = &ctl.rollbacks[0];
            let want = history_replay(&c, &out.ledger, &out.truth.injections[0].affected_events, rb.cutoff);
            if want != rb.snapshot {
                failures.push(format!("{tag}: states differ from history replay"));
            } else if rb.report.isolate != dev || !ctl.registry.is_isolated(&dev) {
                failures.push(format!("{tag}: isolated {} instead", rb.report.isolate));
            }
        }
    }
    ensure(failures.is_empty(), || format!("{}/{runs} runs wrong: {}", failures.len(), failures.join("; ")))?;
    Ok(format!("{runs} runs over {used} scenarios, all restored and isolated"))
}

fn uniform_rows(rng: &mut ChaCha8Rng, n: usize) -> Vec<Row> {
    (0..n)
        .map(|_| {
            let mut r = [0.0; FEATURE_COUNT];
            for v in r.iter_mut() {
                *v = rng.random_range(0.0..1.0);
            }
            r
        })
        .collect()
}

fn sq(a: &Row, b: &Row) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn model_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    // kNN against a full scan
    let pts = uniform_rows(&mut rng, 500);
    let ds = LabeledDataset::new(
        pts.iter()
            .map(|r| (FeatureVector(*r), if r[0] + r[1] > 1.0 { Label::Anomalous } else { Label::Benign }))
            .collect(),
    );
    let knn = KnnModel::train(&ds, 5).map_err(|e| e.to_string())?;
    let (norm_ds, norm) = ds.normalize().map_err(|e| e.to_string())?;
    for q in uniform_rows(&mut rng, 100) {
        let qn = norm.apply(&q);
        let mut all: Vec<(f64, usize)> = norm_ds.rows.iter().enumerate().map(|(i, (f, _))| (sq(&f.0, &qn), i)).collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let want: Vec<usize> = all[..5].iter().map(|p| p.1).collect();
        let votes = want.iter().filter(|&&i| ds.rows[i].1.is_anomalous()).count();
        let label = if votes >= 3 { Label::Anomalous } else { Label::Benign };
        let fv = FeatureVector(q);
        ensure(knn.neighbors(&fv) == want, || format!("kNN neighbours differ for {q:?}"))?;
        ensure(knn.predict(&fv) == label, || format!("kNN label differs for {q:?}"))?;
    }

    // decision-tree root split against every candidate threshold
    let gini = |s: &[bool]| {
        if s.is_empty() {
            return 0.0;
        }
        let p = s.iter().filter(|&&v| v).count() as f64 / s.len() as f64;
        1.0 - p * p - (1.0 - p) * (1.0 - p)
    };
    let mut datasets = 0;
    for _ in 0..300 {
        let n = rng.random_range(2..=8);
        let rows: Vec<_> = (0..n)
            .map(|_| {
                let mut r = [0.0; FEATURE_COUNT];
                for v in r.iter_mut().take(3) {
                    *v = rng.random_range(0..5) as f64;
                }
                (FeatureVector(r), if rng.random_bool(0.4) { Label::Anomalous } else { Label::Benign })
            })
            .collect();
        let ds = LabeledDataset::new(rows);
        let (norm, _) = ds.normalize().map_err(|e| e.to_string())?;
        let y: Vec<bool> = norm.rows.iter().map(|r| r.1.is_anomalous()).collect();
        let parent = gini(&y);
        let mut cands: Vec<(usize, f64, f64)> = Vec::new();
        for f in 0..FEATURE_COUNT {
            let mut vals: Vec<f64> = norm.rows.iter().map(|r| r.0 .0[f]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let t = (w[0] + w[1]) / 2.0;
                let (mut l, mut r) = (Vec::new(), Vec::new());
                for (row, &lab) in norm.rows.iter().zip(&y) {
                    if row.0 .0[f] <= t {
                        l.push(lab)
                    } else {
                        r.push(lab)
                    }
                }
                let child = (l.len() as f64 * gini(&l) + r.len() as f64 * gini(&r)) / n as f64;
                cands.push((f, t, parent - child));
            }
        }
        let best = cands.iter().map(|c| c.2).fold(f64::NEG_INFINITY, f64::max);
        let want = cands
            .iter()
            .filter(|c| c.2 > 1e-12 && c.2 >= best - 1e-12)
            .min_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)))
            .map(|c| (c.0, c.1));
        let tree = DecisionTreeModel::train(&ds, TreeParams::default()).map_err(|e| e.to_string())?;
        let got = tree.root_split();
        let same = match (got, want) {
            (Some((f, t)), Some((wf, wt))) => f == wf && (t - wt).abs() < 1e-12,
            (a, b) => a == b,
        };
        ensure(same, || format!("root split {got:?}, exhaustive {want:?} on {n} rows"))?;
        datasets += 1;
    }

    // one unbagged tree over all features is the decision tree
    let rows: Vec<_> = uniform_rows(&mut rng, 400)
        .into_iter()
        .map(|r| {
            let anomalous = r[0] > 0.6 && r[2] < 0.5 || rng.random_bool(0.05);
            (FeatureVector(r), if anomalous { Label::Anomalous } else { Label::Benign })
        })
        .collect();
    let ds = LabeledDataset::new(rows);
    let p = ForestParams {
        n_trees: 1,
        features_per_split: FEATURE_COUNT,
        bootstrap: false,
        tree: TreeParams::default(),
    };
    let forest = RandomForestModel::train(&ds, p, 99).map_err(|e| e.to_string())?;
    let tree = DecisionTreeModel::train(&ds, TreeParams::default()).map_err(|e| e.to_string())?;
    let queries: Vec<Row> = (0..1_000)
        .map(|_| {
            let mut r = [0.0; FEATURE_COUNT];
            for v in r.iter_mut() {
                *v = rng.random_range(-0.2..1.2);
            }
            r
        })
        .collect();
    let differ = queries
        .iter()
        .filter(|q| forest.predict(&FeatureVector(**q)) != tree.predict(&FeatureVector(**q)))
        .count();
    ensure(differ == 0, || format!("forest and tree disagree on {differ} of 1000 inputs"))?;
    Ok(format!("kNN 500x100 exact, {datasets} root splits exact, forest==tree on 1000 inputs"))
}

fn gradient_check() -> Check {
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    let mut params = 0;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let net = Autoencoder::random(8, 0.5, &mut rng);
        let rows = uniform_rows(&mut rng, 16);
        let (_, grad) = net.loss_and_gradient(&rows, Exec::Sequential);
        for (k, &g) in grad.iter().enumerate() {
            let mut p = net.clone();
            p.weights[k] += eps;
            let up = p.loss(&rows);
            p.weights[k] -= 2.0 * eps;
            let down = p.loss(&rows);
            let num = (up - down) / (2.0 * eps);
            let rel = (num - g).abs() / num.abs().max(g.abs()).max(1e-8);
            worst = worst.max(rel);
            params += 1;
            ensure(rel < 1e-4, || format!("seed {seed} weight {k}: analytic {g} numeric {num}"))?;
        }
    }
    Ok(format!("5 seeds, {params} weights, worst relative error {worst:.2e}"))
}

fn dfs(t: &InteractionTree, k: EventKey) -> BTreeSet<EventKey> {
    let mut seen = BTreeSet::new();
    let mut todo = vec![k];
    while let Some(k) = todo.pop() {
        if seen.insert(k) {
            todo.extend(t.nodes().filter(|n| n.parent == Some(k)).map(|n| n.key));
        }
    }
    seen
}

fn tree_invariants() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut reg = Registry::new();
    let ids: Vec<DeviceId> = (0..6).map(|i| DeviceId::from(format!("D{i}"))).collect();
    for (i, id) in ids.iter().enumerate() {
        reg.register_device(DeviceRecord::new(id.clone(), "t", Ipv4Addr::new(10, 1, 0, i as u8 + 1), DeviceState::Bool(false)))
            .map_err(|e| e.to_string())?;
    }
    let mut trees: Vec<InteractionTree> = Vec::new();
    let mut keys = BTreeSet::new();
    let mut queries = 0;
    for step in 0..10_000 {
        let roll = rng.random_range(0..10);
        if trees.is_empty() || roll == 0 {
            let t = new_tree(&mut reg, ids.choose(&mut rng).unwrap(), "reading", None).map_err(|e| e.to_string())?;
            ensure(keys.insert((t.root_device.clone(), t.root_key)), || format!("step {step}: root key reused"))?;
            trees.push(t);
        } else if roll < 7 {
            let t = trees.choose_mut(&mut rng).unwrap();
            let parents: Vec<EventKey> = t.nodes().map(|n| n.key).collect();
            let p = *parents.choose(&mut rng).unwrap();
            let k = t.attach_event(&p, ids.choose(&mut rng).unwrap(), "ev").map_err(|e| e.to_string())?;
            ensure(keys.insert((t.root_device.clone(), k)), || format!("step {step}: key {k} reused"))?;
        } else {
            let t = trees.choose(&mut rng).unwrap();
            let k = t.nodes().map(|n| n.key).collect::<Vec<_>>().choose(&mut rng).copied().unwrap();
            let got = t.affected_set(&k).map_err(|e| e.to_string())?;
            let set: BTreeSet<EventKey> = got.iter().map(|p| p.0).collect();
            ensure(set.len() == got.len() && set == dfs(t, k), || format!("step {step}: affected set of {k} differs"))?;
            queries += 1;
        }
    }
    for t in &trees {
        let ys: Vec<u64> = t.nodes().map(|n| n.key.y).collect();
        ensure(ys == (1..=t.len() as u64).collect::<Vec<_>>(), || format!("tree {} has Y {ys:?}", t.root_key))?;
        ensure(t.nodes().all(|n| n.key.x == t.x), || format!("tree {} mixes X", t.root_key))?;
    }
    Ok(format!("10000 operations, {} trees, {} keys, {queries} affected-set queries", trees.len(), keys.len()))
}

/// Hand-built classic pcap: Ethernet, IPv4 and TCP/UDP headers, with a
/// few ARP frames mixed in.
fn pcap_fixture(pkts: &[PacketRecord], big_endian: bool, arp_every: usize) -> Vec<u8> {
    let u32b = |v: u32| if big_endian { v.to_be_bytes() } else { v.to_le_bytes() };
    let u16b = |v: u16| if big_endian { v.to_be_bytes() } else { v.to_le_bytes() };
    let mut out = Vec::new();
    out.extend(u32b(0xA1B2_C3D4));
    out.extend(u16b(2));
    out.extend(u16b(4));
    out.extend(u32b(0));
    out.extend(u32b(0));
    out.extend(u32b(65_535));
    out.extend(u32b(1));
    let record = |out: &mut Vec<u8>, ts: f64, frame: &[u8], orig: u32| {
        let us = (ts * 1e6).round() as u64;
        out.extend(u32b((us / 1_000_000) as u32));
        out.extend(u32b((us % 1_000_000) as u32));
        out.extend(u32b(frame.len() as u32));
        out.extend(u32b(orig));
        out.extend_from_slice(frame);
    };
    for (i, p) in pkts.iter().enumerate() {
        if arp_every > 0 && i % arp_every == 0 {
            let mut arp = vec![0xff; 6];
            arp.extend([2, 0, 0, 0, 0, 9, 0x08, 0x06]);
            arp.resize(42, 0);
            record(&mut out, p.ts, &arp, 42);
        }
        let mut f = vec![2, 0, 0, 0, 0, 1, 2, 0, 0, 0, 0, 2, 0x08, 0x00];
        let (proto, l4): (u8, Vec<u8>) = match p.proto {
            Proto::Tcp => {
                let mut h = Vec::new();
                h.extend(p.src_port.to_be_bytes());
                h.extend(p.dst_port.to_be_bytes());
                h.extend([0, 0, 0, 1, 0, 0, 0, 0, 0x50, p.tcp_flags.bits(), 0xff, 0xff, 0, 0, 0, 0]);
                (6, h)
            }
            Proto::Udp => {
                let mut h = Vec::new();
                h.extend(p.src_port.to_be_bytes());
                h.extend(p.dst_port.to_be_bytes());
                h.extend([0, 8, 0, 0]);
                (17, h)
            }
            Proto::Other => (1, vec![8, 0, 0, 0, 0, 0, 0, 0]),
        };
        let total = (20 + l4.len()) as u16;
        f.extend([0x45, 0]);
        f.extend(total.to_be_bytes());
        f.extend([0, 0, 0x40, 0, 64, proto, 0, 0]);
        f.extend(p.src_addr.octets());
        f.extend(p.dst_addr.octets());
        f.extend(l4);
        record(&mut out, p.ts, &f, p.length);
    }
    out
}

fn ingestion_round_trips() -> Check {
    let ctl = Ipv4Addr::new(10, 0, 0, 1);
    let devices: Vec<Ipv4Addr> = (2..12).map(|i| Ipv4Addr::new(10, 0, 0, i)).collect();
    let external = Ipv4Addr::new(93, 184, 216, 34);
    let map = devices.iter().enumerate().map(|(i, a)| (*a, DeviceId::from(format!("dev{i}")))).collect();
    let meta = TraceMeta::new(ctl, map).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(1_000);
    let mut ts = 1_700_000_000.0;
    let pkts: Vec<PacketRecord> = (0..1_000)
        .map(|_| {
            ts += rng.random_range(1..500_000) as f64 / 1e6;
            let dev = *devices.choose(&mut rng).unwrap();
            let (src, dst, direction) = match rng.random_range(0..4) {
                0 => (dev, ctl, Direction::DeviceToController),
                1 => (ctl, dev, Direction::ControllerToDevice),
                2 => (dev, external, Direction::DeviceToExternal),
                _ => (external, dev, Direction::ExternalToDevice),
            };
            let proto = [Proto::Tcp, Proto::Tcp, Proto::Udp, Proto::Other][rng.random_range(0..4)];
            let (sp, dp, flags) = match proto {
                Proto::Tcp => (rng.random(), rng.random(), TcpFlags::from_header_byte(rng.random_range(0..64))),
                Proto::Udp => (rng.random(), rng.random(), TcpFlags::empty()),
                Proto::Other => (0, 0, TcpFlags::empty()),
            };
            PacketRecord {
                ts: (ts * 1e6_f64).round() / 1e6,
                src_addr: src,
                dst_addr: dst,
                src_port: sp,
                dst_port: dp,
                proto,
                length: rng.random_range(60..1_500),
                tcp_flags: flags,
                direction,
            }
        })
        .collect();
    for big in [false, true] {
        let trace = parse_pcap(&pcap_fixture(&pkts, big, 100), &meta).map_err(|e| e.to_string())?;
        ensure(trace.stats.non_ip == 10, || format!("{} non-IP frames counted", trace.stats.non_ip))?;
        ensure(trace.records.len() == pkts.len(), || format!("{} records parsed", trace.records.len()))?;
        for (i, (got, want)) in trace.records.iter().zip(&pkts).enumerate() {
            let same = (got.ts - want.ts).abs() <= 1e-6
                && got.src_addr == want.src_addr
                && got.dst_addr == want.dst_addr
                && got.src_port == want.src_port
                && got.dst_port == want.dst_port
                && got.proto == want.proto
                && got.length == want.length
                && got.tcp_flags == want.tcp_flags
                && got.direction == want.direction;
            ensure(same, || format!("packet {i} (big endian {big}): {got:?} vs {want:?}"))?;
        }
    }

    let cfg = presets::s0(7, 60_000);
    let out = run_scenario(&cfg).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("trace.jsonl");
    write_jsonl(&path, &out.records).map_err(|e| e.to_string())?;
    let back = read_jsonl(&path, &cfg.trace_meta()).map_err(|e| e.to_string())?;
    ensure(back.records == out.records, || "JSONL round trip changed records".into())?;
    Ok(format!("pcap 1000 packets field-exact in both byte orders; JSONL {} records lossless", out.records.len()))
}

fn benign_closure(t: &Trained) -> Check {
    let run = labeled(presets::s0(43, 200_000));
    let feed = StatusFeed::from_ledger(&run.ledger, run.cfg.tick_seconds);
    let (n, a) = run.dataset.class_counts();
    ensure(a == 0, || format!("benign scenario has {a} anomalous events"))?;
    let mut lines = vec![format!("{n} benign events")];
    for m in &t.models {
        let c = replay(inputs(&run, Some(m), &feed, &t.s1.signatures)).map_err(|e| e.to_string())?;
        let interaction = c.count(Outcome::InteractionAnomaly);
        let packet = c.count(Outcome::PacketAnomaly);
        let rate = packet as f64 / run.bursts.len() as f64;
        lines.push(format!("{} packet FP {packet} ({:.2}%) interaction {interaction}", m.kind(), rate * 100.0));
        ensure(interaction == 0 && c.rollbacks.is_empty(), || format!("{}: {interaction} interaction anomalies", m.kind()))?;
        let ok = match m.kind() {
            ModelKind::Autoenc => rate <= 0.01,
            _ => packet == 0,
        };
        ensure(ok, || format!("{}: {packet} packet-level false positives", m.kind()))?;
    }
    Ok(lines.join("; "))
}

fn run(name: &str, f: impl FnOnce() -> Check) -> bool {
    let t = Instant::now();
    let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = t.elapsed().as_secs_f64();
    match r {
        Ok(msg) => {
            println!("PASS {name} ({secs:.1}s): {msg}");
            true
        }
        Err(msg) => {
            println!("FAIL {name} ({secs:.1}s): {msg}");
            false
        }
    }
}

fn main() -> ExitCode {
    let start = Instant::now();
    let s1 = labeled(presets::s1());
    let (train, _) = s1.dataset.split(0.7, 42);
    let params = TrainParams {
        seed: 42,
        ..Default::default()
    };
    let models: Vec<Model> = ModelKind::ALL.iter().map(|&k| Model::train(k, &train, &params).unwrap()).collect();
    let trained = Trained { s1, models };
    let feed = StatusFeed::from_ledger(&trained.s1.ledger, trained.s1.cfg.tick_seconds);
    let mut results = Vec::new();
    results.push(run("classifier_quality", || classifier_quality(&trained, start.elapsed().as_secs_f64())));
    let runs = bench_runs(&trained, &feed);
    let rules = trained.s1.rules.len();
    results.push(run("inference_latency", || inference_latency(runs.as_ref().map_err(Clone::clone)?, train.len())));
    results.push(run("validation_latency", || validation_latency(runs.as_ref().map_err(Clone::clone)?, rules)));
    results.push(run("rollback_correctness", rollback_correctness));
    results.push(run("model_oracles", model_oracles));
    results.push(run("autoencoder_gradient", gradient_check));
    results.push(run("tree_invariants", tree_invariants));
    results.push(run("ingestion_round_trips", ingestion_round_trips));
    results.push(run("benign_closure", || benign_closure(&trained)));
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
