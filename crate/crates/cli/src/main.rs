//! `cpr`: run scripted scenarios, verify and render session files, serve the
//! HTTP API.
//!
//! Exit codes: 0 ok, 1 verification or rejection failure, 2 parse or I/O error.

mod scenario;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use chrono::{FixedOffset, Local, Offset};
use clap::{Parser, Subcommand, ValueEnum};
use cpr_core::clock::SystemClock;
use cpr_core::records::{
    decode_session_unchecked, load_session, render_documentation, render_notes, replay_verify,
    save_session, summarize, IntegrityError, RecordsError, RenderOptions,
};
use cpr_core::{Dosing, DosingOverrides, SessionLog};
use cpr_service::{router, spawn_ticker, Hub, TICK_PERIOD};

use crate::scenario::{format_offset, Scenario};

#[derive(Debug, Parser)]
#[command(name = "cpr", version, about = "Resuscitation session recorder")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Run a TOML scenario on a virtual clock and write the session file.
    Run {
        scenario: PathBuf,
        /// Defaults to `<scenario stem>.session.jsonl` in the current directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a session file's checksum and re-derive its events through the engine.
    Replay { session: PathBuf },
    /// Render a session file.
    Show {
        session: PathBuf,
        #[arg(long, value_enum, default_value_t = View::Summary)]
        view: View,
        /// Print times in UTC instead of the local offset.
        #[arg(long)]
        utc: bool,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Default dosing overrides, JSON or TOML.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Persist sessions here and recover them on start.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum View {
    Summary,
    Documentation,
    Notes,
}

enum Failure {
    /// Exit 1.
    Check(String),
    /// Exit 2.
    Input(String),
}

impl Failure {
    fn exit(self) -> ExitCode {
        let (code, text) = match self {
            Failure::Check(text) => (1, text),
            Failure::Input(text) => (2, text),
        };
        eprintln!("error: {text}");
        ExitCode::from(code)
    }
}

fn records_failure(err: RecordsError) -> Failure {
    match err {
        RecordsError::Integrity(_) | RecordsError::Divergence { .. } => {
            Failure::Check(err.to_string())
        }
        RecordsError::Io { .. }
        | RecordsError::Parse { .. }
        | RecordsError::UnsupportedSchema(_) => Failure::Input(err.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Run { scenario, out } => run(&scenario, out),
        Cmd::Replay { session } => replay(&session),
        Cmd::Show { session, view, utc } => show(&session, view, utc),
        Cmd::Serve {
            host,
            port,
            config,
            data_dir,
        } => serve(&host, port, config.as_deref(), data_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => failure.exit(),
    }
}

fn default_out(scenario: &Path) -> PathBuf {
    let stem = scenario
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".to_owned());
    PathBuf::from(format!("{stem}.session.jsonl"))
}

fn run(path: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    let scenario = Scenario::load(path).map_err(|e| Failure::Input(e.to_string()))?;
    let report = scenario::run(&scenario, &scenario::session_id_for(&scenario.name));
    for (index, kind, reason) in &report.rejections {
        let at = format_offset(scenario.steps[index - 1].offset);
        println!("rejected: step {index} ({kind} at {at}): {reason}");
    }
    println!("{}", summarize(&report.log));
    let out = out.unwrap_or_else(|| default_out(path));
    save_session(&report.log, &out).map_err(|e| Failure::Input(e.to_string()))?;
    println!("wrote {}", out.display());
    if report.surprises.is_empty() {
        return Ok(());
    }
    let lines: Vec<String> = report.surprises.iter().map(ToString::to_string).collect();
    Err(Failure::Check(format!(
        "unexpected outcome\n  {}",
        lines.join("\n  ")
    )))
}

fn replay(path: &Path) -> Result<(), Failure> {
    let log: SessionLog = match load_session(path) {
        Ok(log) => log,
        Err(RecordsError::Integrity(mismatch @ IntegrityError::ChecksumMismatch { .. })) => {
            return Err(Failure::Check(locate_tampering(path, &mismatch)));
        }
        Err(e) => return Err(records_failure(e)),
    };
    let state = replay_verify(&log).map_err(records_failure)?;
    println!(
        "ok: {} events verified, phase {:?}; {}",
        log.events.len(),
        state.phase,
        summarize(&log)
    );
    Ok(())
}

/// Best effort: re-reads the content without the checksum and reports where
/// replay first disagrees with it.
fn locate_tampering(path: &Path, mismatch: &IntegrityError) -> String {
    let located = std::fs::read(path)
        .map_err(|e| e.to_string())
        .and_then(|bytes| {
            decode_session_unchecked::<cpr_core::Mg>(&bytes).map_err(|e| e.to_string())
        })
        .map(|log| replay_verify(&log));
    let detail = match located {
        Ok(Err(RecordsError::Divergence { seq, .. })) => {
            format!("first altered event at seq {seq}")
        }
        Ok(Err(e)) => e.to_string(),
        Ok(Ok(_)) => "content still replays; the checksum line itself was altered".to_owned(),
        Err(e) => e,
    };
    format!("{mismatch}; {detail}")
}

fn local_offset() -> FixedOffset {
    Local::now().offset().fix()
}

fn show(path: &Path, view: View, utc: bool) -> Result<(), Failure> {
    let log: SessionLog = load_session(path).map_err(records_failure)?;
    let options = RenderOptions {
        utc_offset: if utc {
            FixedOffset::east_opt(0).expect("zero offset")
        } else {
            local_offset()
        },
        ..RenderOptions::default()
    };
    match view {
        View::Summary => println!("{}", summarize(&log)),
        View::Documentation => {
            for line in render_documentation(&log, &options) {
                println!("{line}");
            }
        }
        View::Notes => {
            for (stamp, text) in render_notes(&log, &options) {
                println!("{stamp}  {text}");
            }
        }
    }
    Ok(())
}

fn load_defaults(path: &Path) -> Result<Dosing, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    let overrides: DosingOverrides = if path.extension().is_some_and(|ext| ext == "json") {
        serde_json::from_str(&text)
            .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?
    } else {
        toml::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?
    };
    overrides
        .apply_to(&Dosing::default())
        .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn serve(
    host: &str,
    port: u16,
    config: Option<&Path>,
    data_dir: Option<PathBuf>,
) -> Result<(), Failure> {
    let defaults = match config {
        Some(path) => load_defaults(path)?,
        None => Dosing::default(),
    };
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| Failure::Input(format!("bad address {host}:{port}: {e}")))?;
    let mut hub = Hub::new(Arc::new(SystemClock::new()), defaults);
    if let Some(dir) = data_dir {
        std::fs::create_dir_all(&dir)
            .map_err(|e| Failure::Input(format!("{}: {e}", dir.display())))?;
        hub = hub.with_data_dir(dir);
        let recovered = hub.recover().map_err(records_failure)?;
        if !recovered.is_empty() {
            eprintln!("recovered {} session(s)", recovered.len());
        }
    }
    let hub = Arc::new(hub);

    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Input(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Failure::Input(format!("bind {addr}: {e}")))?;
        eprintln!(
            "listening on http://{}",
            listener.local_addr().unwrap_or(addr)
        );
        let ticker = spawn_ticker(hub.clone(), TICK_PERIOD);
        let served = axum::serve(listener, router(hub))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await;
        ticker.abort();
        served.map_err(|e| Failure::Input(e.to_string()))
    })
}
