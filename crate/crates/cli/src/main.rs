//! `tlsprint`: extract message-length vectors from TLS 1.3 captures, compare
//! and report them, classify unknown traces, and synthesize test traffic.
//!
//! Exit codes: 0 ok, 2 malformed input, 3 insufficient data / empty
//! selection, 4 ambiguous classification. Diagnostics go to stderr
//! (verbosity via the `TLSPRINT_LOG` env var); data goes to stdout or files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use tlsprint_core::db::{DbError, FingerprintDb, FingerprintRecord, LoadOutcome};
use tlsprint_core::extract::{extract_sessions, ExtractOptions, SessionExtract};
use tlsprint_core::flow::DirectionMode;
use tlsprint_core::metrics::{LengthVector, VectorMode};
use tlsprint_core::report;
use tlsprint_core::synth::{synth_session, BrowserProfile};
use tlsprint_core::tls::RecordTypeSet;

const EXIT_MALFORMED: u8 = 2;
const EXIT_INSUFFICIENT: u8 = 3;
const EXIT_AMBIGUOUS: u8 = 4;

struct Failure {
    exit: u8,
    message: String,
}

impl Failure {
    fn new(exit: u8, message: impl Into<String>) -> Self {
        Failure {
            exit,
            message: message.into(),
        }
    }
}

type CmdResult = Result<(), Failure>;

#[derive(Parser)]
#[command(
    name = "tlsprint",
    version,
    about = "Fingerprint browsers from TLS 1.3 captures by message-length vectors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract per-session length vectors from pcap captures
    Extract(ExtractArgs),
    /// Pairwise similarity/dissimilarity tables from a fingerprint store
    Report(ReportArgs),
    /// Match an unknown trace against the stored fingerprints
    Classify(ClassifyArgs),
    /// Synthesize a deterministic session from a profile
    Synth(SynthArgs),
}

fn parse_mode(s: &str) -> Result<VectorMode, String> {
    VectorMode::from_str(s)
}

fn parse_direction(s: &str) -> Result<DirectionMode, String> {
    match s {
        "both" => Ok(DirectionMode::Both),
        "client" => Ok(DirectionMode::ClientOnly),
        "server" => Ok(DirectionMode::ServerOnly),
        other => Err(format!(
            "unknown direction {other:?}, expected both|client|server"
        )),
    }
}

fn parse_include(s: &str) -> Result<RecordTypeSet, String> {
    RecordTypeSet::from_str(s)
}

#[derive(Args)]
struct ExtractArgs {
    /// Capture files (classic pcap)
    #[arg(required = true)]
    pcaps: Vec<PathBuf>,
    /// Browser label for the extracted rows (required with -o)
    #[arg(long)]
    browser: Option<String>,
    /// URL label for the extracted rows (required with -o)
    #[arg(long)]
    url: Option<String>,
    /// Vector mode: whole frames or TLS records
    #[arg(long, default_value = "frame", value_parser = parse_mode)]
    mode: VectorMode,
    /// Keep only flows touching this port; 0 keeps every TCP flow
    #[arg(long, default_value_t = 443)]
    port: u16,
    #[arg(long, default_value = "both", value_parser = parse_direction)]
    direction: DirectionMode,
    /// Record types for record mode: comma list of hs,app,ccs,alert or "all"
    #[arg(long, default_value = "hs,app", value_parser = parse_include)]
    include: RecordTypeSet,
    /// Frame mode: drop frames without TCP payload (pure ACKs)
    #[arg(long)]
    tls_only: bool,
    /// Concatenate flows sharing a server endpoint into one session
    #[arg(long)]
    merge_flows: bool,
    /// Write/update this fingerprint store instead of printing rows
    #[arg(short = 'o', long = "out")]
    out: Option<PathBuf>,
    /// Row format when printing to stdout
    #[arg(long, default_value = "csv")]
    format: RowFormat,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum RowFormat {
    Csv,
    Json,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    db: PathBuf,
    #[arg(long, default_value = "frame", value_parser = parse_mode)]
    mode: VectorMode,
    #[arg(long, default_value = "table")]
    format: ReportFormat,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum ReportFormat {
    Table,
    Csv,
    Json,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    db: PathBuf,
    /// Unknown trace as a capture file
    #[arg(long, conflicts_with = "vector", required_unless_present = "vector")]
    pcap: Option<PathBuf>,
    /// Unknown trace as a vector file (JSON array or whitespace-separated lengths)
    #[arg(long)]
    vector: Option<PathBuf>,
    /// Ambiguity threshold: exit 4 when the rank1-rank2 gap is below it
    #[arg(long, default_value_t = 0.0)]
    margin: f64,
    #[arg(long, default_value = "frame", value_parser = parse_mode)]
    mode: VectorMode,
    #[arg(long, default_value_t = 443)]
    port: u16,
    #[arg(long, default_value = "both", value_parser = parse_direction)]
    direction: DirectionMode,
    #[arg(long, default_value = "hs,app", value_parser = parse_include)]
    include: RecordTypeSet,
    #[arg(long)]
    tls_only: bool,
    #[arg(long)]
    merge_flows: bool,
    /// Print the ranking as JSON instead of text
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Profile JSON path
    #[arg(long)]
    profile: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output capture path
    #[arg(short = 'o', long = "out")]
    out: PathBuf,
    /// Plan JSON path (defaults to <out>.plan.json)
    #[arg(long)]
    plan: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("TLSPRINT_LOG", "warn"),
    )
    .format_timestamp(None)
    .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Extract(args) => cmd_extract(args),
        Command::Report(args) => cmd_report(args),
        Command::Classify(args) => cmd_classify(args),
        Command::Synth(args) => cmd_synth(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            if !failure.message.is_empty() {
                eprintln!("tlsprint: {}", failure.message);
            }
            ExitCode::from(failure.exit)
        }
    }
}

fn extract_options(
    mode: VectorMode,
    port: u16,
    direction: DirectionMode,
    include: RecordTypeSet,
    tls_only: bool,
    merge_flows: bool,
) -> ExtractOptions {
    ExtractOptions {
        port_filter: (port != 0).then_some(port),
        mode,
        direction,
        tls_only,
        include,
        merge_flows,
    }
}

/// Extract sessions from one capture file, logging diagnostics. A fatal
/// parse error is reported (exit 2 material); truncation is a warning and
/// partial results flow through.
fn extract_file(path: &Path, options: &ExtractOptions) -> Result<Vec<SessionExtract>, Failure> {
    let bytes = fs::read(path)
        .map_err(|e| Failure::new(EXIT_MALFORMED, format!("{}: {e}", path.display())))?;
    let report = extract_sessions(&bytes, options)
        .map_err(|e| Failure::new(EXIT_MALFORMED, format!("{}: {e}", path.display())))?;
    let d = &report.diagnostics;
    if let Some(truncation) = &d.truncation {
        warn!(
            "{}: {truncation}; keeping the frames parsed before the cut",
            path.display()
        );
    }
    if d.skipped.total() > 0 {
        info!(
            "{}: skipped frames: {} non-ip, {} non-tcp, {} malformed, {} fragmented, {} filtered by port",
            path.display(),
            d.skipped.non_ip,
            d.skipped.non_tcp,
            d.skipped.malformed,
            d.skipped.fragmented,
            d.skipped.port_filtered
        );
    }
    if d.empty_selections > 0 {
        warn!(
            "{}: {} flow(s) dropped because the selection removed every frame/record",
            path.display(),
            d.empty_selections
        );
    }
    if d.gap_flows > 0 {
        warn!(
            "{}: {} flow(s) had a sequence gap; streams truncated at the gap",
            path.display(),
            d.gap_flows
        );
    }
    info!(
        "{}: {} flow(s), {} session(s) extracted",
        path.display(),
        d.flow_count,
        report.sessions.len()
    );
    Ok(report.sessions)
}

fn csv_field(raw: &str) -> String {
    if raw.contains([',', '"', '\n']) {
        format!("\"{}\"", raw.replace('"', "\"\""))
    } else {
        raw.to_string()
    }
}

fn lengths_string(vector: &LengthVector) -> String {
    let mut out = String::new();
    for (i, v) in vector.values().iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v}");
    }
    out
}

fn cmd_extract(args: ExtractArgs) -> CmdResult {
    if args.out.is_some() && (args.browser.is_none() || args.url.is_none()) {
        return Err(Failure::new(
            EXIT_MALFORMED,
            "--browser and --url are required when writing to a store with -o",
        ));
    }
    let browser = args.browser.unwrap_or_else(|| "unlabeled".to_string());
    let url = args.url.unwrap_or_else(|| "unlabeled".to_string());
    let options = extract_options(
        args.mode,
        args.port,
        args.direction,
        args.include,
        args.tls_only,
        args.merge_flows,
    );

    let mut records = Vec::new();
    let mut first_failure: Option<Failure> = None;
    for path in &args.pcaps {
        match extract_file(path, &options) {
            Ok(sessions) => {
                for session in sessions {
                    let record = FingerprintRecord {
                        browser: browser.clone(),
                        url: url.clone(),
                        mode: args.mode,
                        vector: session.vector,
                        suite_fingerprint: session.suite_fingerprint,
                    };
                    records.push((record, session.client_hello));
                }
            }
            Err(failure) => {
                warn!("{}", failure.message);
                first_failure.get_or_insert(failure);
            }
        }
    }

    if !records.is_empty() {
        match &args.out {
            Some(path) => {
                let mut db = if path.exists() {
                    let outcome = FingerprintDb::load(path).map_err(|e| {
                        Failure::new(EXIT_MALFORMED, format!("{}: {e}", path.display()))
                    })?;
                    warn_malformed(path, &outcome);
                    outcome.db
                } else {
                    FingerprintDb::new()
                };
                let mut replaced = 0usize;
                for (record, _) in records.drain(..) {
                    if db.add(record) {
                        replaced += 1;
                    }
                }
                if replaced > 0 {
                    warn!(
                        "{replaced} row(s) replaced an existing (browser, url, mode) entry; \
                         use --merge-flows for one row per page load"
                    );
                }
                db.save(path).map_err(|e| {
                    Failure::new(EXIT_MALFORMED, format!("{}: {e}", path.display()))
                })?;
                info!("store now holds {} record(s): {}", db.len(), path.display());
            }
            None => {
                for (record, client_hello) in &records {
                    match args.format {
                        RowFormat::Csv => println!(
                            "{},{},{},\"{}\"",
                            csv_field(&record.browser),
                            csv_field(&record.url),
                            record.mode,
                            lengths_string(&record.vector)
                        ),
                        RowFormat::Json => {
                            let mut row = serde_json::json!({
                                "browser": record.browser,
                                "url": record.url,
                                "mode": record.mode.to_string(),
                                "lengths": record.vector.values(),
                            });
                            if let Some(fp) = &record.suite_fingerprint {
                                row["suite_fingerprint"] = serde_json::json!(fp);
                            }
                            if let Some(hello) = client_hello {
                                row["client_hello"] = hello.to_json();
                            }
                            println!("{row}");
                        }
                    }
                }
            }
        }
    }

    if let Some(failure) = first_failure {
        return Err(Failure::new(failure.exit, String::new()));
    }
    if records.is_empty() && args.out.is_none() {
        return Err(Failure::new(
            EXIT_INSUFFICIENT,
            "no session matched the selection",
        ));
    }
    Ok(())
}

fn warn_malformed(path: &Path, outcome: &LoadOutcome) {
    for line in &outcome.malformed {
        warn!(
            "{}:{}: skipping malformed record: {}",
            path.display(),
            line.line,
            line.message
        );
    }
}

fn load_db(path: &Path) -> Result<FingerprintDb, Failure> {
    let outcome = FingerprintDb::load(path)
        .map_err(|e| Failure::new(EXIT_MALFORMED, format!("{}: {e}", path.display())))?;
    warn_malformed(path, &outcome);
    Ok(outcome.db)
}

fn cmd_report(args: ReportArgs) -> CmdResult {
    let db = load_db(&args.db)?;
    let reports = db.pairwise_report(args.mode).map_err(|e| match e {
        DbError::InsufficientData(_) => Failure::new(EXIT_INSUFFICIENT, e.to_string()),
        other => Failure::new(EXIT_MALFORMED, other.to_string()),
    })?;
    let rendered = match args.format {
        ReportFormat::Table => report::render_table(&reports),
        ReportFormat::Csv => report::render_csv(&reports),
        ReportFormat::Json => report::render_json(&reports),
    };
    print!("{rendered}");
    Ok(())
}

/// A vector file is a JSON array of lengths, a JSON object with a `lengths`
/// field, or whitespace/comma-separated integers.
fn read_vector_file(path: &Path) -> Result<LengthVector, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::new(EXIT_MALFORMED, format!("{}: {e}", path.display())))?;
    let values: Vec<u32> = if let Ok(json) = serde_json::from_str::<serde_json::Value>(&text) {
        let array = json
            .as_array()
            .cloned()
            .or_else(|| json.get("lengths").and_then(|l| l.as_array()).cloned())
            .ok_or_else(|| {
                Failure::new(
                    EXIT_MALFORMED,
                    format!("{}: expected a JSON array or a \"lengths\" field", path.display()),
                )
            })?;
        array
            .iter()
            .map(|v| {
                v.as_u64()
                    .and_then(|n| u32::try_from(n).ok())
                    .ok_or_else(|| {
                        Failure::new(
                            EXIT_MALFORMED,
                            format!("{}: lengths must be positive integers", path.display()),
                        )
                    })
            })
            .collect::<Result<_, _>>()?
    } else {
        text.split([' ', '\t', '\n', '\r', ','])
            .filter(|part| !part.is_empty())
            .map(|part| {
                part.parse::<u32>().map_err(|e| {
                    Failure::new(EXIT_MALFORMED, format!("{}: {part:?}: {e}", path.display()))
                })
            })
            .collect::<Result<_, _>>()?
    };
    LengthVector::new(values)
        .map_err(|e| Failure::new(EXIT_MALFORMED, format!("{}: {e}", path.display())))
}

fn cmd_classify(args: ClassifyArgs) -> CmdResult {
    let db = load_db(&args.db)?;
    let unknown = if let Some(path) = &args.vector {
        read_vector_file(path)?
    } else {
        let path = args.pcap.as_ref().expect("clap enforces pcap xor vector");
        let options = extract_options(
            args.mode,
            args.port,
            args.direction,
            args.include,
            args.tls_only,
            args.merge_flows,
        );
        let mut sessions = extract_file(path, &options)?;
        if sessions.is_empty() {
            return Err(Failure::new(
                EXIT_INSUFFICIENT,
                "no session matched the selection in the unknown capture",
            ));
        }
        // the main page-load connection is the one with the most frames
        sessions.sort_by_key(|s| std::cmp::Reverse(s.frame_count));
        if sessions.len() > 1 {
            info!(
                "classifying the largest of {} sessions ({} frames, {})",
                sessions.len(),
                sessions[0].frame_count,
                sessions[0].flow_key
            );
        }
        sessions.remove(0).vector
    };

    let result = db.classify(&unknown, args.mode).map_err(|e| match e {
        DbError::EmptyDatabase(_) => Failure::new(EXIT_INSUFFICIENT, e.to_string()),
        other => Failure::new(EXIT_MALFORMED, other.to_string()),
    })?;

    if args.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&result).expect("result serializes")
        );
    } else {
        println!("rank  browser  similarity  matched_url");
        for (i, entry) in result.ranked.iter().enumerate() {
            println!(
                "{:<4}  {}  {:.3}  {}",
                i + 1,
                entry.browser,
                entry.best_similarity,
                entry.matched_url
            );
        }
        println!("decision: {} (margin {:.3})", result.decision, result.margin);
    }
    if result.margin < args.margin {
        return Err(Failure::new(
            EXIT_AMBIGUOUS,
            format!(
                "ambiguous: margin {:.6} is below the threshold {:.6}",
                result.margin, args.margin
            ),
        ));
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> CmdResult {
    let text = fs::read_to_string(&args.profile)
        .map_err(|e| Failure::new(EXIT_MALFORMED, format!("{}: {e}", args.profile.display())))?;
    let profile: BrowserProfile = serde_json::from_str(&text)
        .map_err(|e| Failure::new(EXIT_MALFORMED, format!("{}: {e}", args.profile.display())))?;
    let (pcap, plan) = synth_session(&profile, args.seed)
        .map_err(|e| Failure::new(EXIT_MALFORMED, e.to_string()))?;
    fs::write(&args.out, &pcap)
        .map_err(|e| Failure::new(EXIT_MALFORMED, format!("{}: {e}", args.out.display())))?;
    let plan_path = args.plan.unwrap_or_else(|| {
        let mut p = args.out.as_os_str().to_owned();
        p.push(".plan.json");
        PathBuf::from(p)
    });
    fs::write(&plan_path, plan.to_json())
        .map_err(|e| Failure::new(EXIT_MALFORMED, format!("{}: {e}", plan_path.display())))?;
    info!(
        "wrote {} ({} frames) and {}",
        args.out.display(),
        plan.expected_frame_lengths.len(),
        plan_path.display()
    );
    Ok(())
}
