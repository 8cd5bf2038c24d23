use std::path::{Path, PathBuf};

use serde::Serialize;

use homewatch::events::{build_signatures, segment_bursts, Burst, SignatureConfig, SignatureSet, FEATURE_COUNT};
use homewatch::interaction::{Registry, RuleSet};
use homewatch::models::{evaluate, EvalMetrics, Model, ModelKind, TrainParams};
use homewatch::pipeline::{
    self, ConfigDigest, Controller, ControllerParams, PipelineError, ReplayInputs, RollbackSummary, RunReport, Stat,
    StatusFeed,
};
use homewatch::sim::{self, ScenarioConfig, LEDGER_FILE, REGISTRY_FILE, TRUTH_FILE};
use homewatch::types::{DeviceId, Label};

use crate::{Command, Labeled, RunArgs, TraceArgs};

type Result<T> = std::result::Result<T, PipelineError>;

fn beside(trace: &Path, name: &str) -> PathBuf {
    trace.parent().unwrap_or(Path::new(".")).join(name)
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    std::fs::write(path, body).map_err(|e| PipelineError::io(path, e))
}

fn jsonl<T: Serialize>(rows: &[T]) -> String {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(r).expect("row serializes"));
        s.push('\n');
    }
    s
}

struct Loaded {
    registry: Registry,
    bursts: Vec<Burst>,
    digest: ConfigDigest,
}

fn load(args: &TraceArgs, command: &str) -> Result<Loaded> {
    let registry_path = args.registry.clone().unwrap_or_else(|| beside(&args.trace, REGISTRY_FILE));
    let registry = Registry::load(&registry_path)?;
    let meta = pipeline::trace_meta(&registry, args.controller)?;
    let trace = pipeline::load_trace(&args.trace, &meta)?;
    let bursts = segment_bursts(&trace.records, &trace.meta, args.gap_threshold);
    let digest = ConfigDigest::new(command)
        .param("controller", args.controller)
        .param("gap_threshold", args.gap_threshold)
        .file("trace", &args.trace)?
        .file("registry", &registry_path)?;
    Ok(Loaded {
        registry,
        bursts,
        digest,
    })
}

struct Truth {
    ledger: Vec<sim::LedgerEntry>,
    tick: f64,
    digest: ConfigDigest,
}

fn load_truth(truth: &Path, ledger: &Path, digest: ConfigDigest) -> Result<Truth> {
    let t = sim::read_truth(truth)?;
    Ok(Truth {
        ledger: sim::read_ledger(ledger)?,
        tick: t.tick_seconds,
        digest: digest.file("truth", truth)?.file("ledger", ledger)?,
    })
}

fn labeled(args: &Labeled, command: &str) -> Result<(Loaded, Truth)> {
    let loaded = load(&args.trace, command)?;
    let truth = args.truth.clone().unwrap_or_else(|| beside(&args.trace.trace, TRUTH_FILE));
    let ledger = args.ledger.clone().unwrap_or_else(|| beside(&args.trace.trace, LEDGER_FILE));
    let digest = ConfigDigest::new(command);
    let t = load_truth(&truth, &ledger, digest)?;
    Ok((loaded, t))
}

pub fn run(cmd: Command) -> Result<RunReport> {
    match cmd {
        Command::Simulate { scenario, out } => simulate(&scenario, &out),
        Command::ExtractSignatures { input, out } => extract(&input, &out),
        Command::Train {
            input,
            model_kind,
            seed,
            train_fraction,
            out,
        } => train(&input, &model_kind, seed, train_fraction, &out),
        Command::Detect {
            trace,
            model,
            signatures,
            truth,
            out,
        } => detect(&trace, &model, &signatures, truth, out.as_deref()),
        Command::Replay { run } => replay(&run, false),
        Command::Bench { run } => replay(&run, true),
        Command::Isolate { registry, device } => administer(&registry, &device, true),
        Command::Reactivate { registry, device } => administer(&registry, &device, false),
    }
}

fn simulate(scenario: &Path, out: &Path) -> Result<RunReport> {
    let cfg = ScenarioConfig::load(scenario)?;
    let run = sim::run_scenario(&cfg)?;
    run.write_dir(&cfg, out)?;
    let digest = ConfigDigest::new("simulate").file("scenario", scenario)?.finish();
    let mut r = RunReport::new("simulate", digest);
    r.count("events", run.truth.event_count)
        .count("packets", run.records.len())
        .count("anomalous_events", run.truth.label_counts.anomalous)
        .count("anomalous_packet_events", run.truth.packet_label_counts.anomalous)
        .count("injections", run.truth.injections.len());
    Ok(r)
}

fn extract(input: &Labeled, out: &Path) -> Result<RunReport> {
    let (loaded, truth) = labeled(input, "extract-signatures")?;
    let named = sim::named_bursts(&loaded.bursts, &truth.ledger, truth.tick)?;
    let sigs = SignatureSet::new(build_signatures(&named, &SignatureConfig::default())?);
    sigs.save(out)?;
    let digest = merge(loaded.digest, truth.digest).finish();
    let mut r = RunReport::new("extract-signatures", digest);
    r.count("bursts", loaded.bursts.len())
        .count("benign_bursts", named.len())
        .count("signatures", sigs.len());
    Ok(r)
}

fn merge(a: ConfigDigest, b: ConfigDigest) -> ConfigDigest {
    a.param("inputs", b.finish())
}

fn train(input: &Labeled, kind: &str, seed: u64, fraction: f64, out: &Path) -> Result<RunReport> {
    let kind: ModelKind = kind.parse()?;
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(homewatch::models::ModelError::InvalidParam(format!(
            "train fraction {fraction} is not inside (0, 1)"
        ))
        .into());
    }
    let (loaded, truth) = labeled(input, "train")?;
    let ds = sim::label_dataset(&loaded.bursts, &truth.ledger, truth.tick)?;
    let (tr, te) = ds.split(fraction, seed);
    let params = TrainParams {
        seed,
        ..TrainParams::default()
    };
    let model = Model::train(kind, &tr, &params)?;
    model.save(out)?;
    let metrics = evaluate(&model, &te)?;
    let digest = merge(loaded.digest, truth.digest)
        .param("model_kind", kind)
        .param("seed", seed)
        .param("train_fraction", fraction)
        .finish();
    let mut r = RunReport::new("train", digest);
    r.count("train_rows", tr.len()).count("test_rows", te.len());
    r.metrics = Some(metrics);
    Ok(r)
}

#[derive(Serialize)]
struct DetectVerdict<'a> {
    burst: usize,
    device: &'a DeviceId,
    ts: f64,
    event: Option<&'a str>,
    label: Label,
}

fn detect(
    args: &TraceArgs,
    model_path: &Path,
    sig_path: &Path,
    truth: Option<PathBuf>,
    out: Option<&Path>,
) -> Result<RunReport> {
    let loaded = load(args, "detect")?;
    let model = Model::load(model_path, Some(FEATURE_COUNT))?;
    let sigs = SignatureSet::load(sig_path)?;
    let d = pipeline::detect(&loaded.bursts, &sigs, &model)?;
    let mut digest = loaded.digest.file("model", model_path)?.file("signatures", sig_path)?;

    let truth = truth.or_else(|| Some(beside(&args.trace, TRUTH_FILE)).filter(|p| p.exists()));
    let mut metrics = None;
    if let Some(tp) = &truth {
        let t = load_truth(tp, &beside(tp, LEDGER_FILE), ConfigDigest::new("detect"))?;
        let joined = sim::join_bursts(&loaded.bursts, &t.ledger, t.tick)?;
        let expected: Vec<Label> = joined
            .iter()
            .map(|j| j.map_or(Label::Anomalous, |i| t.ledger[i].packet_label()))
            .collect();
        metrics = Some(EvalMetrics::from_predictions(&expected, &d.labels).with_timings(&d.inference_ms));
        digest = merge(digest, t.digest);
    }

    if let Some(out) = out {
        let rows: Vec<DetectVerdict> = loaded
            .bursts
            .iter()
            .enumerate()
            .map(|(i, b)| DetectVerdict {
                burst: i,
                device: &b.device_id,
                ts: b.start_ts,
                event: d.events[i].as_deref(),
                label: d.labels[i],
            })
            .collect();
        write(&out.join("verdicts.jsonl"), jsonl(&rows))?;
        d.logs.write_dir(out.join("logs"))?;
    }

    let mut r = RunReport::new("detect", digest.finish());
    r.count("events", d.labels.len())
        .count("anomalous", d.anomalies())
        .count("unmatched", d.events.iter().filter(|e| e.is_none()).count());
    r.timing.inference_ms = Stat::of(&d.inference_ms);
    r.metrics = metrics;
    Ok(r)
}

fn replay(args: &RunArgs, bench: bool) -> Result<RunReport> {
    let command = if bench { "bench" } else { "replay" };
    let loaded = load(&args.trace, command)?;
    let rules = RuleSet::load(&args.rules)?;
    let sigs = SignatureSet::load(&args.signatures)?;
    let model = args.model.as_ref().map(|p| Model::load(p, Some(FEATURE_COUNT))).transpose()?;
    let mut digest = loaded
        .digest
        .file("rules", &args.rules)?
        .file("signatures", &args.signatures)?;
    if let Some(p) = &args.model {
        digest = digest.file("model", p)?;
    }

    let ledger = args
        .ledger
        .clone()
        .or_else(|| Some(beside(&args.trace.trace, LEDGER_FILE)).filter(|p| p.exists()));
    let feed = match ledger {
        Some(lp) => {
            let tp = args.truth.clone().unwrap_or_else(|| beside(&lp, TRUTH_FILE));
            let t = load_truth(&tp, &lp, ConfigDigest::new(command))?;
            digest = merge(digest, t.digest);
            Some(StatusFeed::from_ledger(&t.ledger, t.tick))
        }
        None => None,
    };

    let inputs = ReplayInputs {
        bursts: &loaded.bursts,
        registry: loaded.registry,
        rules: &rules,
        signatures: &sigs,
        model: model.as_ref(),
        feed: feed.as_ref(),
        params: ControllerParams::default(),
    };
    let (c, resources) = if bench {
        let (c, res) = pipeline::bench(inputs)?;
        (c, Some(res))
    } else {
        (pipeline::replay(inputs)?, None)
    };
    if let Some(out) = &args.out {
        write_run(&c, out)?;
    }

    let mut r = RunReport::new(command, digest.finish());
    use pipeline::Outcome as O;
    r.count("events", c.verdicts.len())
        .count("trees", c.trees)
        .count("max_depth", c.max_depth)
        .count("rules", rules.len())
        .count("packet_anomalies", c.count(O::PacketAnomaly))
        .count("interaction_anomalies", c.count(O::InteractionAnomaly))
        .count("unknown", c.count(O::Unknown))
        .count("orphans", c.count(O::Orphan))
        .count("cascades", c.count(O::Cascade))
        .count("rejected", c.count(O::Rejected))
        .count("rollbacks", c.rollbacks.len())
        .count("isolated", c.registry.isolated().len());
    r.timing.inference_ms = Stat::of(&c.inference_ms);
    r.timing.validate_plan_ms = Stat::of(&c.validate_plan_ms);
    r.resources = resources;
    r.rollbacks = c.rollbacks.iter().map(RollbackSummary::from).collect();
    Ok(r)
}

fn write_run(c: &Controller, out: &Path) -> Result<()> {
    let registry = serde_json::to_string_pretty(&c.registry.to_json()).expect("registry serializes");
    write(&out.join(REGISTRY_FILE), registry)?;
    write(&out.join("verdicts.jsonl"), jsonl(&c.verdicts))?;
    write(
        &out.join("rollbacks.json"),
        serde_json::to_string_pretty(&c.rollbacks).expect("rollbacks serialize"),
    )?;
    c.logs.write_dir(out.join("logs").join("devices"))?;
    for (root, text) in &c.interaction_log {
        write(&out.join("logs").join("interactions").join(format!("{root}.log")), text)?;
    }
    Ok(())
}

fn administer(path: &Path, device: &str, isolate: bool) -> Result<RunReport> {
    let mut reg = Registry::load(path)?;
    let id = DeviceId::from(device);
    let command = if isolate {
        reg.isolate(&id)?;
        "isolate"
    } else {
        reg.reactivate(&id)?;
        "reactivate"
    };
    let digest = ConfigDigest::new(command)
        .param("device", device)
        .file("registry", path)?
        .finish();
    write(path, serde_json::to_string_pretty(&reg.to_json()).expect("registry serializes"))?;
    let mut r = RunReport::new(command, digest);
    r.count("devices", reg.len()).count("isolated", reg.isolated().len());
    Ok(r)
}
