use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use mjls_hinf_cli::app::{self, CommandKind, Options};
use mjls_hinf_cli::EXIT_INPUT_ERROR;

/// Minimax state-feedback control of Markov jump linear systems over
/// lossy actuation channels: solve, analyze, and simulate from a scenario
/// file.
#[derive(Parser)]
#[command(name = "mjls-hinf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Attenuation level override (replaces game.gamma).
    #[arg(long)]
    gamma: Option<f64>,
    /// Horizon override (replaces game.horizon, selects the finite game).
    #[arg(long)]
    horizon: Option<usize>,
    /// Tolerance override: bisection width for gamma-c/sweep, fixed-point
    /// residual for infinite solve.
    #[arg(long)]
    tol: Option<f64>,
    /// Seed override for simulation.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (replaces outputs.dir; default ".").
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker thread count (default: one per core). Results do not depend
    /// on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Cap on channel count; outcome vectors are dense with 2^m entries.
    #[arg(long)]
    max_channels: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the model and report jump observability.
    Check(CommonArgs),
    /// Solve the finite-horizon game (cost series + gain tables) or the
    /// infinite-horizon fixed point.
    Solve(CommonArgs),
    /// Bisect for the critical attenuation level.
    #[command(name = "gamma-c")]
    GammaC(CommonArgs),
    /// One critical-level search per grid point of a channel parameter.
    Sweep(CommonArgs),
    /// Closed-loop Monte-Carlo simulation under the saddle controller.
    Simulate(CommonArgs),
}

fn to_options(args: &CommonArgs) -> Options {
    Options {
        scenario: args.scenario.clone(),
        gamma: args.gamma,
        horizon: args.horizon,
        tol: args.tol,
        seed: args.seed,
        out: args.out.clone(),
        threads: args.threads,
        max_channels: args.max_channels,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::Check(args) => (CommandKind::Check, args),
        Command::Solve(args) => (CommandKind::Solve, args),
        Command::GammaC(args) => (CommandKind::GammaC, args),
        Command::Sweep(args) => (CommandKind::Sweep, args),
        Command::Simulate(args) => (CommandKind::Simulate, args),
    };
    match app::run(kind, &to_options(args)) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(EXIT_INPUT_ERROR as u8)
        }
    }
}
