//! `krsl`: run simulations, theory predictions, surface grids and
//! robustness-bound checks from JSON configuration files.
//!
//! Exit codes: 0 success, 1 runtime error, 2 configuration error,
//! 3 inapplicable theory regime.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use krsl::noise::GENERATOR_ID;
use krsl::{KrslError, Parallelism};
use serde_json::json;

use commands::{sha256_hex, Outputs, Overrides};
use config::ConfigError;

#[derive(Parser)]
#[command(name = "krsl", version, about = "Kernel risk-sensitive loss experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo experiment, optionally paired with theory or swept over outlier settings
    Run(CommonArgs),
    /// Transient and steady-state predictions only
    Theory(CommonArgs),
    /// KRSL and C-Loss performance surface grids
    Surface(CommonArgs),
    /// Scalar robustness bounds and their randomized validation
    Bounds(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON configuration file
    config: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Override the number of Monte Carlo runs
    #[arg(long)]
    runs: Option<usize>,
    /// Override the RNG seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores); 1 runs sequentially
    #[arg(long)]
    threads: Option<usize>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<KrslError>() {
        Some(
            KrslError::InapplicableRegime(_) | KrslError::StabilityViolation { .. } | KrslError::NoSolution(_),
        ) => 3,
        Some(
            KrslError::InvalidParameter { .. }
            | KrslError::Config(_)
            | KrslError::UnsupportedDimension(_),
        ) => 2,
        _ => 1,
    }
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    let started = Instant::now();
    let (name, args) = match &cli.command {
        Command::Run(a) => ("run", a),
        Command::Theory(a) => ("theory", a),
        Command::Surface(a) => ("surface", a),
        Command::Bounds(a) => ("bounds", a),
    };
    let parallelism = match args.threads {
        Some(0) => return Err(ConfigError("`--threads` must be at least 1".into()).into()),
        Some(1) => Parallelism::Sequential,
        Some(t) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build_global()
                .context("cannot configure the thread pool")?;
            Parallelism::Parallel
        }
        None => Parallelism::Parallel,
    };
    let ov = Overrides {
        runs: args.runs,
        seed: args.seed,
    };
    if !args.config.is_file() {
        return Err(ConfigError(format!("config file `{}` not found", args.config.display())).into());
    }
    let mut out = Outputs::new(&args.out)?;
    let done = match &cli.command {
        Command::Run(_) => commands::cmd_run(&args.config, &mut out, &ov, parallelism)?,
        Command::Theory(_) => commands::cmd_theory(&args.config, &mut out, &ov)?,
        Command::Surface(_) => commands::cmd_surface(&args.config, &mut out, &ov, parallelism)?,
        Command::Bounds(_) => commands::cmd_bounds(&args.config, &mut out, &ov, parallelism)?,
    };
    let manifest = json!({
        "command": name,
        "config": args.config.display().to_string(),
        "config_sha256": sha256_hex(&done.config_bytes),
        "overrides": { "runs": ov.runs, "seed": ov.seed },
        "generator": GENERATOR_ID,
        "version": concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")),
        "runtime_seconds": started.elapsed().as_secs_f64(),
        "files": out.files.iter().map(|(n, h)| json!({ "name": n, "sha256": h })).collect::<Vec<_>>(),
    });
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    let path = out.dir().join("manifest.json");
    std::fs::write(&path, text).with_context(|| format!("cannot write `{}`", path.display()))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
