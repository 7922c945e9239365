//! Batch CLI for the verification harness: each subcommand reads a TOML
//! config, runs its study over the (n, p) grid, and writes results.csv,
//! manifest.json and summary.txt into the output directory.
//!
//! Exit codes: 0 on success, 1 on runtime failure or an aborted grid point,
//! 2 on a missing or malformed config.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bvmcov::bench::selftest::selftest;
use bvmcov::bench::{execute, ExperimentConfig};
use bvmcov::error::Error;

#[derive(Parser)]
#[command(name = "bvmcov", version, about = "Bayesian covariance/precision verification harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for the replicate pool (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Posterior-vs-matrix-normal total variation curves over the grid.
    Bvm(RunArgs),
    /// Posterior mass outside multiples of the contraction-rate radius.
    Contraction(RunArgs),
    /// Frequentist coverage of matrix-normal and quantile intervals.
    Coverage(RunArgs),
    /// Prior flatness estimates around the data-driven anchor.
    Flatness(RunArgs),
    /// Exact posterior over decomposable graphs at p <= 5.
    GraphSelect(RunArgs),
    /// Closed-form divergence audit plus the inequality checks.
    DivergenceAudit(RunArgs),
    /// Run the built-in hand-checkable identities and exit.
    Selftest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Selftest => run_selftest(),
        Command::Bvm(a) => run(bvmcov::bench::Subcommand::Bvm, a),
        Command::Contraction(a) => run(bvmcov::bench::Subcommand::Contraction, a),
        Command::Coverage(a) => run(bvmcov::bench::Subcommand::Coverage, a),
        Command::Flatness(a) => run(bvmcov::bench::Subcommand::Flatness, a),
        Command::GraphSelect(a) => run(bvmcov::bench::Subcommand::GraphSelect, a),
        Command::DivergenceAudit(a) => run(bvmcov::bench::Subcommand::DivergenceAudit, a),
    }
}

fn run_selftest() -> ExitCode {
    let mut failed = 0usize;
    for t in selftest() {
        match t.result {
            Ok(()) => println!("PASS {}", t.name),
            Err(e) => {
                failed += 1;
                println!("FAIL {}: {e}", t.name);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        eprintln!("{failed} selftest checks failed");
        ExitCode::from(1)
    }
}

fn run(sub: bvmcov::bench::Subcommand, args: RunArgs) -> ExitCode {
    if let Some(t) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("failed to size the thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let cfg = match ExperimentConfig::from_path(&args.config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    match execute(&cfg, sub, args.seed, args.out.as_deref()) {
        Ok(outcome) => {
            for l in &outcome.summary_lines {
                println!("{l}");
            }
            for c in &outcome.checks {
                println!(
                    "{} {}: {}",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
            }
            if outcome.aborted_grid_points > 0 {
                eprintln!(
                    "{} grid point(s) aborted (>10% replicate failures)",
                    outcome.aborted_grid_points
                );
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e @ Error::Config { .. }) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("run failed: {e}");
            ExitCode::from(1)
        }
    }
}
