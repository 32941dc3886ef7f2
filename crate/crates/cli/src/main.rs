//! `kramers` — batch front-end for solving linear-quadratic stochastic
//! optimal control problems by Markov-jump-process discretization.
//!
//! Exit codes: 0 success; 2 configuration or validation error; 3 numerical
//! failure; 4 the generator condition was violated but the Galerkin
//! solution was still produced.

mod commands;
mod config;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use commands::{Context, Outcome};
use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "kramers", version, about = "Optimal control of reversible diffusions via Markov jump processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the reference boundary value problem on a fine grid.
    Reference(RunArgs),
    /// Assemble the Galerkin model and solve the dual decision problem.
    Solve(RunArgs),
    /// Simulate a trajectory and estimate the core-MSM matrices.
    Sample(RunArgs),
    /// Compute the a-priori error bounds.
    Bounds(RunArgs),
    /// Run the Markov-chain-approximation lattice sweep.
    Mca(RunArgs),
    /// Run every stage the configuration supports.
    All(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for path ensembles (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn load_context(args: &RunArgs) -> Result<Context, (u8, String)> {
    let raw = fs::read(&args.config)
        .map_err(|e| (2u8, format!("cannot read {}: {e}", args.config.display())))?;
    let text = String::from_utf8_lossy(&raw);
    let config = ExperimentConfig::parse(&text).map_err(|e| (2u8, e.to_string()))?;
    let mut hasher = Sha256::new();
    hasher.update(&raw);
    let config_hash: String = hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    let out_dir = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.output.directory));
    fs::create_dir_all(&out_dir)
        .map_err(|e| (2u8, format!("cannot create {}: {e}", out_dir.display())))?;
    if let Some(threads) = args.threads {
        // ignore failures from repeated initialization in the same process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    Ok(Context { config, config_hash, out_dir, seed_override: args.seed })
}

fn exit_code_for(err: &kramers::Error) -> u8 {
    use kramers::Error::*;
    match err {
        InvalidProblem(_) | InvalidArgument(_) | InvalidBasis(_) => 2,
        GeneratorCondition { .. } => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, run): (&RunArgs, fn(&Context) -> kramers::Result<Outcome>) = match &cli.command {
        Command::Reference(a) => (a, commands::cmd_reference),
        Command::Solve(a) => (a, commands::cmd_solve),
        Command::Sample(a) => (a, commands::cmd_sample),
        Command::Bounds(a) => (a, commands::cmd_bounds),
        Command::Mca(a) => (a, commands::cmd_mca),
        Command::All(a) => (a, commands::cmd_all),
    };
    let ctx = match load_context(args) {
        Ok(ctx) => ctx,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(code);
        }
    };
    let start = std::time::Instant::now();
    match run(&ctx) {
        Ok(Outcome::Ok) => {
            eprintln!(
                "done in {:.2} s, outputs in {}",
                start.elapsed().as_secs_f64(),
                ctx.out_dir.display()
            );
            ExitCode::SUCCESS
        }
        Ok(Outcome::GalerkinOnly) => {
            eprintln!(
                "generator condition violated: the Galerkin solution was written, \
                 but it has no Markov-decision interpretation"
            );
            ExitCode::from(4)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
