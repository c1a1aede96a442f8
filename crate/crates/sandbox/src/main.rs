use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context};
use cbdc_sandbox::gateway::{router, shared, spawn_autotick};
use cbdc_sandbox::{replay, save_aml, save_ledger};
use cbdc_sim::{Harness, RunReport, ScenarioConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "sandbox", about = "Token-based retail CBDC simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario to completion and audit it.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the RunReport here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Persist the ledger as JSONL.
        #[arg(long)]
        ledger: Option<PathBuf>,
        /// Persist the banks' AML rows as JSONL.
        #[arg(long)]
        aml: Option<PathBuf>,
    },
    /// Serve the HTTP gateway over an interactive harness.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Step the clock every N milliseconds.
        #[arg(long)]
        autotick: Option<u64>,
    },
    /// Verify the hash chain of a persisted ledger.
    Replay {
        #[arg(long)]
        ledger: PathBuf,
        /// Fail unless the head digest equals this hex value.
        #[arg(long)]
        expect_digest: Option<String>,
    },
}

fn load(path: &Path, seed: Option<u64>) -> anyhow::Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut config = ScenarioConfig::from_json(&text)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(config)
}

fn run(
    config: &Path,
    seed: Option<u64>,
    report: Option<PathBuf>,
    ledger: Option<PathBuf>,
    aml: Option<PathBuf>,
) -> anyhow::Result<bool> {
    let mut h = Harness::new(load(config, seed)?)?;
    h.run_to_end();
    let r = RunReport::from_harness(&h);
    if let Some(path) = ledger {
        save_ledger(&h, &path).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = aml {
        save_aml(&h, &path).with_context(|| format!("writing {}", path.display()))?;
    }
    match report {
        Some(path) => {
            std::fs::write(&path, r.to_json()).with_context(|| format!("writing {}", path.display()))?;
            for a in &r.audits {
                eprintln!("{} {}: {}", if a.passed { "PASS" } else { "FAIL" }, a.name, a.detail);
            }
            eprintln!("tick {} digest {}", r.final_tick, r.ledger_digest);
        }
        None => println!("{}", r.to_json()),
    }
    Ok(r.all_audits_passed)
}

async fn serve(config: &Path, port: u16, autotick: Option<u64>) -> anyhow::Result<()> {
    let state = shared(Harness::new(load(config, None)?)?);
    if let Some(ms) = autotick {
        if ms == 0 {
            bail!("--autotick must be positive");
        }
        spawn_autotick(state.clone(), Duration::from_millis(ms));
    }
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    eprintln!("gateway listening on http://{addr}");
    axum::serve(listener, router(state)).await?;
    Ok(())
}

fn check_replay(ledger: &Path, expect: Option<String>) -> anyhow::Result<bool> {
    let head = replay(ledger).with_context(|| format!("replaying {}", ledger.display()))?;
    println!("{head}");
    Ok(expect.is_none_or(|e| e.eq_ignore_ascii_case(&head.to_hex())))
}

fn main() -> ExitCode {
    let outcome = match Cli::parse().command {
        Command::Run {
            config,
            seed,
            report,
            ledger,
            aml,
        } => run(&config, seed, report, ledger, aml),
        Command::Serve { config, port, autotick } => tokio::runtime::Runtime::new()
            .context("starting runtime")
            .and_then(|rt| rt.block_on(serve(&config, port, autotick)))
            .map(|()| true),
        Command::Replay { ledger, expect_digest } => check_replay(&ledger, expect_digest),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
