use std::net::Ipv4Addr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser)]
#[command(name = "homewatch", version, about = "Smart-home controller: anomaly detection, interaction validation, rollback")]
struct Cli {
    /// Report format on stdout.
    #[arg(long, value_enum, default_value_t = Format::Json, global = true)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write trace, ledger, truth, registry and rules.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn event signatures from the benign events of a labeled trace.
    ExtractSignatures {
        #[command(flatten)]
        input: Labeled,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a packet-level model and report held-out metrics.
    Train {
        #[command(flatten)]
        input: Labeled,
        #[arg(long)]
        model_kind: String,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 0.7)]
        train_fraction: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify every event of a trace.
    Detect {
        #[command(flatten)]
        trace: TraceArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        signatures: PathBuf,
        /// Ground truth to score against; defaults to truth.json beside the trace when present.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Directory for verdicts and device logs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full controller run: detection, trees, validation and rollback.
    Replay {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Replay with latency statistics and resource sampling.
    Bench {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Quarantine a device in a registry file.
    Isolate {
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        device: String,
    },
    /// Return a quarantined device to service.
    Reactivate {
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        device: String,
    },
}

#[derive(Args)]
struct TraceArgs {
    /// Packet trace, `.pcap` or JSONL.
    #[arg(long)]
    trace: PathBuf,
    /// Device registry; defaults to registry.json beside the trace.
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long, default_value = "10.0.0.1")]
    controller: Ipv4Addr,
    /// Largest gap inside one burst, seconds.
    #[arg(long, default_value_t = homewatch::events::DEFAULT_GAP_THRESHOLD)]
    gap_threshold: f64,
}

#[derive(Args)]
struct Labeled {
    #[command(flatten)]
    trace: TraceArgs,
    /// Simulator ground truth; defaults to truth.json beside the trace.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Event ledger; defaults to ledger.jsonl beside the trace.
    #[arg(long)]
    ledger: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    trace: TraceArgs,
    #[arg(long)]
    rules: PathBuf,
    #[arg(long)]
    signatures: PathBuf,
    /// Packet-level model; without one, unmatched events are anomalous.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Device status feed (an event ledger); defaults to ledger.jsonl beside the trace when present.
    #[arg(long)]
    ledger: Option<PathBuf>,
    /// Ground truth carrying the tick length of the feed.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Directory for the final registry, verdicts, rollbacks and logs.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Format::Json = cli.format;
    match commands::run(cli.command) {
        Ok(report) => {
            println!("{}", report.to_json());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
