//! veriframe: stream video frames with on-device digests, commit the
//! digests to a small voting ledger, and verify archived footage
//! frame-by-frame.
//!
//! Exit codes: 0 success/authentic, 1 operational error, 2 tampered,
//! 3 incomplete verification.

use std::net::{TcpListener, UdpSocket};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use veriframe_core::bench::{self, BenchConfig};
use veriframe_core::digest::{DigestAlgorithm, WriteMode};
use veriframe_core::frame_io::{read_stream, SelectionPolicy, StreamId};
use veriframe_core::ledger::{
    bootstrap_cluster, cluster::write_bootstrap, keys, open_snapshot, service, ClusterConfig,
};
use veriframe_core::pipeline::{run_demo, DemoOptions, Scenario};
use veriframe_core::transport::{
    self, run_capture_agent, run_ingest, CaptureConfig, FileArchive, IngestSockets,
    LedgerSubmit, RecordingLedger,
};
use veriframe_core::verifier::{
    exit_code, render_report, render_report_json, tamper_tool, verify_stream, TamperMutation,
};
use veriframe_core::wire::record_bytes;

#[derive(Parser)]
#[command(name = "veriframe", version, about, max_term_width = 100)]
struct Cli {
    /// Seed for anything randomized (synthetic pixels, loss injection,
    /// key generation, tamper offsets).
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,

    /// Log verbosity: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a cluster config and per-member key files.
    Bootstrap(BootstrapArgs),
    /// Stream an SFV1 file: frames over UDP, digest records over TCP.
    Capture(CaptureArgs),
    /// Receive one capture session, archive it, forward surviving
    /// records to the ledger.
    Ingest(IngestArgs),
    /// Run one ledger cluster member.
    Ledger(LedgerArgs),
    /// Ask a ledger node for the records covering one frame.
    LedgerQuery(LedgerQueryArgs),
    /// Check an archived stream against the ledger, frame by frame.
    Verify(VerifyArgs),
    /// Deterministically corrupt chosen frames of an SFV1 file.
    Tamper(TamperArgs),
    /// Measure serialize/hash/pipeline timing across resolutions and
    /// write a CSV.
    Bench(BenchArgs),
    /// One-command end-to-end run against an in-process cluster.
    Demo(DemoArgs),
}

#[derive(Args)]
struct BootstrapArgs {
    /// Member count; three is the minimum for voting to mean anything.
    #[arg(long, default_value_t = 3)]
    members: usize,
    /// Comma-separated member names (defaults: court,police,fire,...).
    #[arg(long, value_delimiter = ',')]
    names: Vec<String>,
    /// First member's TCP port; members take consecutive ports.
    #[arg(long, default_value_t = 7100)]
    base_port: u16,
    /// Output directory for cluster.toml and node-<id>.key files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CaptureArgs {
    /// SFV1 input path.
    #[arg(long)]
    input: PathBuf,
    /// Frame selection: all, nth:<n> or gop:<g>.
    #[arg(long, default_value = "all")]
    policy: String,
    /// Digest algorithm: md5 or sha256.
    #[arg(long, default_value = "sha256")]
    algo: String,
    /// Write mode: perframe, batchbytes:<k> or batchdigests:<k>.
    #[arg(long, default_value = "perframe")]
    mode: String,
    /// Ingest digest channel address (TCP).
    #[arg(long)]
    hash_addr: String,
    /// Ingest frame channel address (UDP).
    #[arg(long)]
    frame_addr: String,
    /// Simulated per-datagram drop probability in [0,1].
    #[arg(long, default_value_t = 0.0)]
    drop: f64,
}

#[derive(Args)]
struct IngestArgs {
    /// TCP address to accept the digest channel on.
    #[arg(long)]
    hash_listen: String,
    /// UDP address to receive frame datagrams on.
    #[arg(long)]
    frame_listen: String,
    /// How long to wait for frame datagrams after end-of-stream.
    #[arg(long, default_value_t = 2000)]
    window_ms: u64,
    /// Where to write the SFV1 archive (gap sidecar lands next to it).
    #[arg(long)]
    archive: PathBuf,
    /// Cluster config; records are submitted to every member.
    #[arg(long)]
    cluster: Option<PathBuf>,
    /// Without a cluster: write surviving records to this file instead,
    /// one hex-encoded record per line.
    #[arg(long)]
    records_out: Option<PathBuf>,
}

#[derive(Args)]
struct LedgerArgs {
    /// Cluster config file.
    #[arg(long)]
    config: PathBuf,
    /// This member's id.
    #[arg(long)]
    node_id: u16,
    /// Signing key file (defaults to node-<id>.key beside the config).
    #[arg(long)]
    key: Option<PathBuf>,
    /// Chain storage directory (defaults to node-<id>-data beside the
    /// config).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Round timeout in milliseconds.
    #[arg(long, default_value_t = 2000)]
    round_timeout_ms: u64,
}

#[derive(Args)]
struct LedgerQueryArgs {
    /// Any cluster member's address.
    #[arg(long)]
    addr: String,
    /// Stream id, 32 hex chars.
    #[arg(long)]
    stream: String,
    /// Frame number to look up.
    #[arg(long)]
    frame: u64,
}

#[derive(Args)]
struct VerifyArgs {
    /// Archived SFV1 exhibit.
    #[arg(long)]
    archive: PathBuf,
    /// Gap sidecar from ingest; omit for a complete archive.
    #[arg(long)]
    gaps: Option<PathBuf>,
    /// Live ledger node address.
    #[arg(long, conflicts_with = "snapshot")]
    ledger: Option<String>,
    /// Chain log file (offline verification); requires --cluster.
    #[arg(long)]
    snapshot: Option<PathBuf>,
    /// Cluster config, needed to validate a snapshot's votes.
    #[arg(long)]
    cluster: Option<PathBuf>,
    /// Frame selection declared at capture.
    #[arg(long, default_value = "all")]
    policy: String,
    /// Digest algorithm declared at capture.
    #[arg(long, default_value = "sha256")]
    algo: String,
    /// Write mode declared at capture.
    #[arg(long, default_value = "perframe")]
    mode: String,
    /// Also write the machine-readable report here.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct TamperArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Comma-separated frame ids to corrupt.
    #[arg(long, value_delimiter = ',')]
    frames: Vec<u64>,
    /// byte-flip or region.
    #[arg(long, default_value = "byte-flip")]
    mutation: String,
}

#[derive(Args)]
struct BenchArgs {
    /// Bench config TOML; defaults cover the six standard presets.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV output path.
    #[arg(long)]
    out: PathBuf,
    /// Also run the trend checks and print one line per assertion.
    #[arg(long, default_value_t = true)]
    trends: bool,
}

#[derive(Args)]
struct DemoArgs {
    /// clean, tampered:<k> or lossy:<p>.
    #[arg(long, default_value = "clean")]
    scenario: String,
    /// Output directory for every artifact.
    #[arg(long)]
    out: PathBuf,
    /// Frames in the synthetic stream.
    #[arg(long, default_value_t = 303)]
    frames: u64,
    #[arg(long, default_value = "all")]
    policy: String,
    #[arg(long, default_value = "md5")]
    algo: String,
    #[arg(long, default_value = "perframe")]
    mode: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let seed = cli.seed;
    match cli.command {
        Command::Bootstrap(args) => cmd_bootstrap(args, seed),
        Command::Capture(args) => cmd_capture(args, seed),
        Command::Ingest(args) => cmd_ingest(args),
        Command::Ledger(args) => cmd_ledger(args),
        Command::LedgerQuery(args) => cmd_ledger_query(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Tamper(args) => cmd_tamper(args, seed),
        Command::Bench(args) => cmd_bench(args, seed),
        Command::Demo(args) => cmd_demo(args, seed),
    }
}

fn cmd_bootstrap(args: BootstrapArgs, seed: u64) -> Result<ExitCode> {
    let boot = bootstrap_cluster(args.members, &args.names, seed, args.base_port)?;
    write_bootstrap(&boot, &args.out)?;
    println!(
        "wrote cluster.toml and {} key files to {} (quorum {})",
        args.members,
        args.out.display(),
        boot.config.quorum()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_capture(args: CaptureArgs, seed: u64) -> Result<ExitCode> {
    let config = CaptureConfig {
        policy: SelectionPolicy::parse(&args.policy)?,
        algorithm: DigestAlgorithm::parse(&args.algo)?,
        mode: WriteMode::parse(&args.mode)?,
        drop_prob: args.drop,
        seed,
    };
    if !(0.0..=1.0).contains(&args.drop) {
        bail!("--drop must be in [0,1]");
    }
    let file = std::fs::File::open(&args.input)
        .with_context(|| format!("open {}", args.input.display()))?;
    let (header, frames) = read_stream(std::io::BufReader::new(file))?;
    let (mut digest_sink, mut frame_sink) =
        transport::connect_sinks(&args.hash_addr, &args.frame_addr)?;
    let summary = run_capture_agent(&header, frames, &config, &mut digest_sink, &mut frame_sink)
        .map_err(|e| anyhow!("{e}"))?;
    println!(
        "sent {} frames as {} datagrams ({} dropped by injection), {} records in {:.2?}",
        summary.frames_sent,
        summary.datagrams_sent,
        summary.datagrams_dropped,
        summary.records_sent,
        summary.wall_time
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_ingest(args: IngestArgs) -> Result<ExitCode> {
    let sockets = IngestSockets {
        hash_listener: TcpListener::bind(&args.hash_listen)
            .with_context(|| format!("bind {}", args.hash_listen))?,
        frame_socket: UdpSocket::bind(&args.frame_listen)
            .with_context(|| format!("bind {}", args.frame_listen))?,
    };
    let archive = FileArchive::create(&args.archive);
    let mut ledger: Box<dyn LedgerSubmit> = match (&args.cluster, &args.records_out) {
        (Some(path), _) => {
            let config = ClusterConfig::load(path)?;
            Box::new(service::ClusterClient::new(&config))
        }
        (None, Some(_)) | (None, None) => Box::new(RecordingLedger::default()),
    };
    let (summary, report) = run_ingest(
        sockets,
        Duration::from_millis(args.window_ms),
        archive,
        ledger.as_mut(),
    )?;
    let gaps_path = args.archive.with_extension("gaps");
    transport::write_gap_file(&gaps_path, &report.gaps)?;
    if args.cluster.is_none() {
        let records_path = args
            .records_out
            .clone()
            .unwrap_or_else(|| args.archive.with_extension("records"));
        let mut text = String::new();
        for record in &report.committed {
            text.push_str(&hex::encode(record_bytes(record)));
            text.push('\n');
        }
        std::fs::write(&records_path, text)?;
        println!("records written to {}", records_path.display());
    }
    println!(
        "archived {} frames to {} ({} gaps, sidecar {}); {} records committed, {} discarded",
        summary.frames_received,
        args.archive.display(),
        report.gaps.len(),
        gaps_path.display(),
        summary.records_committed,
        summary.records_discarded
    );
    for discarded in report.discarded.iter().take(10) {
        println!(
            "  discarded {}..{}: {}",
            discarded.record.frame_id_start, discarded.record.frame_id_end, discarded.reason
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_ledger(args: LedgerArgs) -> Result<ExitCode> {
    let config = ClusterConfig::load(&args.config)?;
    let config_dir = args
        .config
        .parent()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));
    let key_path = args
        .key
        .unwrap_or_else(|| config_dir.join(format!("node-{}.key", args.node_id)));
    let key_text = std::fs::read_to_string(&key_path)
        .with_context(|| format!("read signing key {}", key_path.display()))?;
    let signing_key = keys::signing_key_from_hex(&key_text)
        .ok_or_else(|| anyhow!("{} is not a 64-hex-char key", key_path.display()))?;
    let data_dir = args
        .data_dir
        .unwrap_or_else(|| config_dir.join(format!("node-{}-data", args.node_id)));
    let options = service::NodeOptions {
        round_timeout: Duration::from_millis(args.round_timeout_ms),
        ..Default::default()
    };
    // Runs until the process is killed; tests use the in-process spawn
    // API, which has a clean shutdown path.
    let shutdown = Arc::new(AtomicBool::new(false));
    service::run_node(config, args.node_id, signing_key, &data_dir, options, shutdown)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_ledger_query(args: LedgerQueryArgs) -> Result<ExitCode> {
    let stream_id = StreamId::from_hex(&args.stream)?;
    let mut client = service::LedgerClient::new(args.addr);
    let hits = client.query(stream_id, args.frame).map_err(|e| anyhow!("{e}"))?;
    if hits.is_empty() {
        println!("no committed record covers frame {}", args.frame);
    }
    for hit in hits {
        println!(
            "height {} ts {}us  {} {} frames {}..{}  {}",
            hit.height,
            hit.timestamp_us,
            hit.record.algorithm,
            hit.record.mode,
            hit.record.frame_id_start,
            hit.record.frame_id_end,
            hit.record.digest_hex()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(args: VerifyArgs) -> Result<ExitCode> {
    let policy = SelectionPolicy::parse(&args.policy)?;
    let algorithm = DigestAlgorithm::parse(&args.algo)?;
    let mode = WriteMode::parse(&args.mode)?;
    let gaps = match &args.gaps {
        Some(path) => transport::read_gap_file(path)
            .with_context(|| format!("read gaps {}", path.display()))?,
        None => Vec::new(),
    };
    let report = match (&args.ledger, &args.snapshot) {
        (Some(addr), None) => {
            let mut client = service::LedgerClient::new(addr.clone());
            verify_stream(&args.archive, &gaps, &mut client, policy, algorithm, mode)?
        }
        (None, Some(snapshot)) => {
            let cluster_path = args
                .cluster
                .as_ref()
                .ok_or_else(|| anyhow!("--snapshot needs --cluster to check the chain's votes"))?;
            let config = ClusterConfig::load(cluster_path)?;
            let mut store = open_snapshot(&config, snapshot)?;
            verify_stream(&args.archive, &gaps, &mut store, policy, algorithm, mode)?
        }
        _ => bail!("pass exactly one of --ledger <addr> or --snapshot <chainfile>"),
    };
    print!("{}", render_report(&report));
    if let Some(json) = &args.json {
        std::fs::write(json, render_report_json(&report))?;
    }
    Ok(code_from(exit_code(report.overall)))
}

fn cmd_tamper(args: TamperArgs, seed: u64) -> Result<ExitCode> {
    let mutation = TamperMutation::parse(&args.mutation)?;
    let outcome = tamper_tool(&args.input, &args.output, &args.frames, mutation, seed)?;
    for (frame, offsets) in &outcome.mutated {
        println!("frame {frame}: {} byte(s) changed", offsets.len());
    }
    println!("wrote {}", args.output.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(args: BenchArgs, seed: u64) -> Result<ExitCode> {
    let mut config = match &args.config {
        Some(path) => BenchConfig::load(path)?,
        None => BenchConfig::default(),
    };
    if args.config.is_none() {
        config.seed = seed;
    }
    let result = bench::run_bench(&config)?;
    let mut file = std::fs::File::create(&args.out)?;
    bench::write_csv(&result, &mut file)?;
    println!("{} cells written to {}", result.cells.len(), args.out.display());
    if args.trends {
        let report = bench::compare_trend(&result);
        print!("{}", report.render());
        if !report.all_pass() {
            return Ok(ExitCode::FAILURE);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_demo(args: DemoArgs, seed: u64) -> Result<ExitCode> {
    let scenario = Scenario::parse(&args.scenario)?;
    let options = DemoOptions {
        seed,
        frames: args.frames,
        policy: SelectionPolicy::parse(&args.policy)?,
        algorithm: DigestAlgorithm::parse(&args.algo)?,
        mode: WriteMode::parse(&args.mode)?,
        ..Default::default()
    };
    let artifacts = run_demo(scenario, &options, &args.out)?;
    println!(
        "capture: {} frames, {} datagrams ({} dropped), {} records",
        artifacts.capture.frames_sent,
        artifacts.capture.datagrams_sent,
        artifacts.capture.datagrams_dropped,
        artifacts.capture.records_sent
    );
    println!(
        "ingest: {} frames archived, {} records committed, {} discarded",
        artifacts.ingest.frames_received,
        artifacts.ingest.records_committed,
        artifacts.ingest.records_discarded
    );
    println!(
        "ledger: {} blocks committed, chain height {}",
        artifacts.blocks_committed, artifacts.chain_height
    );
    println!();
    print!("{}", render_report(&artifacts.report));
    println!();
    println!("report: {}", artifacts.paths.report_json.display());
    Ok(code_from(artifacts.exit_code))
}

fn code_from(code: i32) -> ExitCode {
    ExitCode::from(u8::try_from(code).unwrap_or(1))
}

