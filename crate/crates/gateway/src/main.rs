use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use clap::{Parser, Subcommand};
use fmgate::config::Config;
use fmgate::{cli, router, AppState};
use fmgate_core::recorder::ChainStatus;
use fmgate_core::{load_policy, Clock, SystemClock};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "fmgate", version, about = "Responsible-AI foundation-model gateway")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP/JSON gateway.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Validate a policy file and print its canonical form.
    CheckPolicy { path: PathBuf },
    /// Verify the hash chain of an audit store. Exit status 1 on tampering.
    VerifyAudit {
        store: PathBuf,
        /// Seq range `a..b` (half-open); whole log when omitted.
        range: Option<String>,
    },
    /// Export a seq range (`a..b`, `a..`, `..b` or `..`) as JSON Lines.
    ExportAudit { store: PathBuf, range: String },
    /// Print the stakeholder report for `START/END` (RFC 3339).
    Report {
        store: PathBuf,
        period: String,
        #[arg(long)]
        notes: Option<String>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> anyhow::Result<ExitCode> {
    let mut out = std::io::stdout().lock();
    match command {
        Command::Serve { config } => {
            serve(Config::load(&config)?)?;
        }
        Command::CheckPolicy { path } => {
            let bytes = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
            let policy = load_policy(&bytes)?;
            out.write_all(&policy.to_canonical_json())?;
            writeln!(out)?;
        }
        Command::VerifyAudit { store, range } => {
            let status = cli::verify_store(&store, range.as_deref())?;
            writeln!(out, "{}", serde_json::to_string(&status)?)?;
            if status != ChainStatus::Ok {
                return Ok(ExitCode::from(1));
            }
        }
        Command::ExportAudit { store, range } => {
            out.write_all(&cli::export_store(&store, &range)?)?;
        }
        Command::Report { store, period, notes } => {
            let report = cli::report_store(&store, &period, notes, SystemClock.now())?;
            writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn serve(config: Config) -> anyhow::Result<()> {
    let state = Arc::new(AppState::from_config(&config, Arc::new(SystemClock))?);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let sweeper = {
            let pipeline = state.pipeline.clone();
            let period = Duration::from_millis(config.expiry_sweep_ms.max(1));
            tokio::spawn(async move {
                let mut tick = tokio::time::interval(period);
                loop {
                    tick.tick().await;
                    let p = pipeline.clone();
                    match tokio::task::spawn_blocking(move || p.sweep_expired()).await {
                        Ok(Ok(n)) if n > 0 => tracing::info!(expired = n, "verifier tasks expired"),
                        Ok(Err(e)) => tracing::error!(error = %e, "expiry sweep failed"),
                        _ => {}
                    }
                }
            })
        };
        let listener = tokio::net::TcpListener::bind(&config.listen)
            .await
            .with_context(|| format!("binding {}", config.listen))?;
        tracing::info!(addr = %listener.local_addr()?, "listening");
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
                tracing::info!("shutting down");
            })
            .await?;
        sweeper.abort();
        anyhow::Ok(())
    })
}
