use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gru_attitude::config::{load_config, RunConfig};
use gru_attitude::run::{cmd_run, cmd_verify, write_error_record};
use gru_attitude::{Error, Result};

/// Magnetorquer PID attitude control with iterative GRU disturbance compensation.
#[derive(Parser)]
#[command(name = "gru-attitude", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a compensation campaign and write its artifacts.
    Run {
        /// TOML configuration; omitted keys take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (falls back to `output_dir` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed, overriding the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of iterations, overriding the config.
        #[arg(long)]
        iterations: Option<usize>,
        /// Short periods and a single restart, for smoke runs.
        #[arg(long)]
        quick: bool,
    },
    /// Recompute the report of a finished run from its telemetry and compare.
    Verify {
        #[arg(long)]
        out: PathBuf,
    },
}

fn prepare(
    config: Option<&Path>,
    seed: Option<u64>,
    iterations: Option<usize>,
    quick: bool,
) -> Result<RunConfig> {
    let mut cfg = match config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(n) = iterations {
        cfg.iterations.iterations = n;
    }
    if quick {
        cfg = cfg.quick();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    iterations: Option<usize>,
    quick: bool,
) -> ExitCode {
    let cfg = prepare(config.as_deref(), seed, iterations, quick);
    let out = match (out, &cfg) {
        (Some(out), _) => out,
        (None, Ok(cfg)) if cfg.output_dir.is_some() => cfg.output_dir.clone().unwrap(),
        (None, Ok(_)) => {
            eprintln!("error: no output directory; pass --out or set output_dir");
            return ExitCode::FAILURE;
        }
        (None, Err(e)) => return fail(None, e),
    };
    let cfg = match cfg {
        Ok(cfg) => cfg,
        Err(e) => return fail(Some(&out), &e),
    };
    match cmd_run(&cfg, &out) {
        Ok(summary) => {
            if let Some(report) = &summary.report {
                for it in &report.iterations {
                    println!(
                        "iteration {}: mean attitude rmse {:.6e} rad, max psd peak {:.6e}",
                        it.iteration, it.mean_attitude_rmse, it.max_psd_peak
                    );
                }
            }
            match &summary.error {
                Some(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
                None => {
                    println!(
                        "wrote {} iteration(s) to {}",
                        summary.iterations,
                        out.display()
                    );
                    ExitCode::SUCCESS
                }
            }
        }
        Err(e) => fail(Some(&out), &e),
    }
}

fn fail(out: Option<&Path>, err: &Error) -> ExitCode {
    eprintln!("error: {err}");
    if let Some(out) = out {
        if let Err(e) = write_error_record(out, err) {
            eprintln!("error: could not write error record: {e}");
        }
    }
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            config,
            out,
            seed,
            iterations,
            quick,
        } => run(config, out, seed, iterations, quick),
        Command::Verify { out } => match cmd_verify(&out) {
            Ok(report) => {
                println!(
                    "verified {} iteration(s) in {}",
                    report.iterations.len(),
                    out.display()
                );
                ExitCode::SUCCESS
            }
            Err(Error::VerificationFailed(cells)) => {
                eprintln!("verification failed:");
                for c in &cells {
                    eprintln!("  {c}");
                }
                ExitCode::FAILURE
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        },
    }
}
