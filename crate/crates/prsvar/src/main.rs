use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use prsvar::cli::{self, OutputFormat};
use prsvar::error::Error;

/// Asymptotic normality of polygenic-score predictions: analytic limits and
/// a deterministic Monte Carlo verification harness.
#[derive(Parser)]
#[command(name = "prsvar", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(clap::Args)]
struct Common {
    /// Path to the JSON configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output path (stdout when omitted; `simulate` requires it).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed override (also honors PRSVAR_SEED).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for replication fan-out (also honors PRSVAR_WORKERS;
    /// defaults to the logical core count).
    #[arg(long)]
    workers: Option<usize>,
    /// Report format where applicable.
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the analytic law selected by the config and emit a report.
    Analytic(Common),
    /// Run the replication batch and write a CSV (plus a manifest sidecar).
    Simulate(Common),
    /// Run analytic + simulate and compare against the config thresholds.
    Verify(Common),
    /// Tabulate laws over the declared parameter grids as long-form CSV.
    Sweep(Common),
}

fn env_u64(name: &str) -> Option<u64> {
    std::env::var(name).ok()?.parse().ok()
}

fn env_usize(name: &str) -> Option<usize> {
    std::env::var(name).ok()?.parse().ok()
}

fn run(
    common: &Common,
    go: impl FnOnce(&cli::Resolved) -> Result<bool, Error> + Send,
) -> ExitCode {
    let seed = common.seed.or_else(|| env_u64("PRSVAR_SEED"));
    let workers = common.workers.or_else(|| env_usize("PRSVAR_WORKERS"));

    let result = cli::load_config(&common.config)
        .and_then(|cfg| cli::resolve(cfg, seed))
        .and_then(|resolved| match workers {
            Some(w) if w > 0 => rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::Config(format!("worker pool: {e}")))?
                .install(|| go(&resolved)),
            _ => go(&resolved),
        });

    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Analytic(c) => run(c, |r| {
            let format = match c.format {
                Format::Json => OutputFormat::Json,
                Format::Csv => OutputFormat::Csv,
            };
            cli::cmd_analytic(r, c.out.as_deref(), format).map(|()| true)
        }),
        Command::Simulate(c) => run(c, |r| {
            let out = c
                .out
                .as_deref()
                .ok_or_else(|| Error::Config("simulate requires --out".into()))?;
            cli::cmd_simulate(r, out).map(|()| true)
        }),
        Command::Verify(c) => run(c, |r| cli::cmd_verify(r, c.out.as_deref()).map(|v| v.pass)),
        Command::Sweep(c) => run(c, |r| cli::cmd_sweep(r, c.out.as_deref()).map(|()| true)),
    }
}
