use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use a4l_core::dataset::{ManifestEntry, WarehouseCatalog};
use a4l_core::orchestrator::{run_cycle, run_payload, OrchestratorError, PayloadOutcome, PayloadRegistry, RunStatus};
use a4l_core::payload::{parse_payload, validate_payload, AnalysisPayload, PayloadError, StatisticName};
use a4l_core::{Layout, SyncReport};

/// Stable process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Exit {
    Ok = 0,
    Io = 1,
    Parse = 2,
    Validation = 3,
    Partial = 4,
    Lock = 5,
}

#[derive(Debug)]
struct Failure {
    exit: Exit,
    message: String,
}

impl Failure {
    fn new(exit: Exit, message: impl ToString) -> Self {
        Self { exit, message: message.to_string() }
    }
}

impl From<PayloadError> for Failure {
    fn from(e: PayloadError) -> Self {
        let exit = match e {
            PayloadError::Syntax { .. } | PayloadError::Schema { .. } => Exit::Parse,
            PayloadError::Invalid(_) => Exit::Validation,
        };
        let message = match &e {
            PayloadError::Invalid(diags) => diags.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n"),
            other => other.to_string(),
        };
        Failure::new(exit, message)
    }
}

impl From<OrchestratorError> for Failure {
    fn from(e: OrchestratorError) -> Self {
        let exit = match e {
            OrchestratorError::LockHeld { .. } => Exit::Lock,
            _ => Exit::Io,
        };
        Failure::new(exit, e)
    }
}

type CmdResult = Result<Exit, Failure>;

#[derive(Debug, Parser)]
#[command(name = "a4l", version, about = "Configuration-driven analytics pipeline")]
struct Cli {
    /// Pipeline root directory.
    #[arg(long, env = "A4L_ROOT", default_value = ".", global = true)]
    root: PathBuf,
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Increase log verbosity (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a payload file against the warehouse.
    Validate { payload: PathBuf },
    /// Validate, stage and execute a payload and write its results.
    Run { payload: PathBuf },
    /// Run one sync cycle: scan the store, update the warehouse, re-run affected payloads.
    Sync,
    /// Run sync cycles repeatedly.
    Watch(WatchArgs),
    /// Show warehouse datasets and which payloads read them.
    List,
}

#[derive(Debug, Args)]
struct WatchArgs {
    /// Seconds between cycles.
    #[arg(long, default_value_t = 86_400, value_parser = clap::value_parser!(u64).range(1..))]
    interval: u64,
    /// Stop after this many cycles.
    #[arg(long, hide = true)]
    cycles: Option<u64>,
}

fn emit_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("output serializes"));
}

fn read_payload(path: &Path) -> Result<AnalysisPayload, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::new(Exit::Io, format!("{}: {e}", path.display())))?;
    Ok(parse_payload(&bytes)?)
}

fn warehouse_catalog(layout: &Layout) -> Result<WarehouseCatalog, Failure> {
    let warehouse = layout.warehouse();
    let manifest = warehouse.load_manifest().map_err(|e| Failure::new(Exit::Io, e))?;
    warehouse.catalog(&manifest).map_err(|e| Failure::new(Exit::Io, e))
}

fn cmd_validate(layout: &Layout, path: &Path, json: bool) -> CmdResult {
    let payload = read_payload(path)?;
    let catalog = warehouse_catalog(layout)?;
    let report = validate_payload(&payload, &StatisticName::registry(), &catalog);
    if json {
        emit_json(&report);
    } else if report.is_ok() {
        println!("ok");
    } else {
        for d in &report.diagnostics {
            println!("{d}");
        }
    }
    Ok(if report.is_ok() { Exit::Ok } else { Exit::Validation })
}

fn outcome_exit(o: &PayloadOutcome) -> Exit {
    match o.status {
        RunStatus::Success => Exit::Ok,
        RunStatus::Partial => Exit::Partial,
        RunStatus::ValidationFailed => Exit::Validation,
        RunStatus::Failed => Exit::Io,
    }
}

fn cmd_run(layout: &Layout, path: &Path, json: bool) -> CmdResult {
    let payload = read_payload(path)?;
    layout.ensure().map_err(|e| Failure::new(Exit::Io, format!("{}: {e}", layout.root().display())))?;
    let outcome = run_payload(layout, &path.display().to_string(), &payload);
    if json {
        emit_json(&outcome);
    } else {
        for key in &outcome.result_keys {
            println!("{key}");
        }
        for m in &outcome.messages {
            eprintln!("{m}");
        }
    }
    Ok(outcome_exit(&outcome))
}

fn print_report(report: &SyncReport) {
    println!("{}", report.summary());
    for u in &report.updated {
        match &u.archived_to {
            Some(a) => println!("updated {} (previous version archived to {a})", u.dataset),
            None => println!("added {}", u.dataset),
        }
    }
    for o in &report.run_outcomes {
        let status = serde_json::to_value(o.status).expect("status serializes");
        println!("payload {}: {}", o.payload, status.as_str().unwrap_or_default());
        for key in &o.result_keys {
            println!("  {key}");
        }
        for m in &o.messages {
            println!("  ! {m}");
        }
    }
    for name in &report.missing_from_store {
        println!("missing from store: {name}");
    }
    for e in &report.registry_errors {
        println!("unreadable payload {}: {}", e.payload, e.message);
    }
}

fn cycle(layout: &Layout, json: bool) -> CmdResult {
    let report = run_cycle(layout)?;
    if json {
        emit_json(&report);
    } else {
        print_report(&report);
    }
    Ok(if report.all_ok() { Exit::Ok } else { Exit::Partial })
}

fn cmd_watch(layout: &Layout, args: &WatchArgs, json: bool) -> CmdResult {
    let mut n = 0;
    loop {
        let last = match cycle(layout, json) {
            Ok(code) => code,
            Err(f) if f.exit == Exit::Lock => {
                log::warn!("{}", f.message);
                Exit::Lock
            }
            Err(f) => {
                log::error!("{}", f.message);
                f.exit
            }
        };
        n += 1;
        if args.cycles.is_some_and(|max| n >= max) {
            return Ok(last);
        }
        std::thread::sleep(Duration::from_secs(args.interval));
    }
}

#[derive(Serialize)]
struct Listing {
    datasets: BTreeMap<String, ManifestEntry>,
    payloads: BTreeMap<String, Vec<String>>,
    unreadable_payloads: BTreeMap<String, String>,
}

fn cmd_list(layout: &Layout, json: bool) -> CmdResult {
    let manifest = layout.warehouse().load_manifest().map_err(|e| Failure::new(Exit::Io, e))?;
    let registry = PayloadRegistry::load(&layout.payloads())?;
    let listing = Listing {
        datasets: manifest.entries,
        payloads: registry
            .payloads
            .iter()
            .map(|(file, p)| (file.clone(), p.datasets().into_iter().map(str::to_owned).collect()))
            .collect(),
        unreadable_payloads: registry.errors.into_iter().map(|e| (e.payload, e.message)).collect(),
    };
    if json {
        emit_json(&listing);
        return Ok(Exit::Ok);
    }
    for (name, entry) in &listing.datasets {
        println!("{name}\t{}\t{} bytes\t{}", entry.sha256, entry.bytes, entry.updated.to_rfc3339());
    }
    for (file, datasets) in &listing.payloads {
        println!("{file} -> {}", datasets.join(", "));
    }
    for (file, message) in &listing.unreadable_payloads {
        println!("{file} (unreadable: {message})");
    }
    Ok(Exit::Ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let layout = Layout::new(&cli.root);
    let result = match &cli.command {
        Command::Validate { payload } => cmd_validate(&layout, payload, cli.json),
        Command::Run { payload } => cmd_run(&layout, payload, cli.json),
        Command::Sync => cycle(&layout, cli.json),
        Command::Watch(args) => cmd_watch(&layout, args, cli.json),
        Command::List => cmd_list(&layout, cli.json),
    };
    let exit = result.unwrap_or_else(|f| {
        eprintln!("error: {}", f.message);
        f.exit
    });
    ExitCode::from(exit as u8)
}
