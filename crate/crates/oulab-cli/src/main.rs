use clap::{Parser, Subcommand};
use oulab_cli::{cmd_certify, cmd_constants, cmd_simulate, cmd_sweep, prepare, Overrides};
use std::path::PathBuf;

/// Simulation and stability certification for linear SDEs with random
/// coefficient matrices.
#[derive(Debug, Parser)]
#[command(name = "oulab", version, about)]
struct Cli {
    /// Run-config file (TOML). Env: OULAB_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides the config). Env: OULAB_OUT.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed override. Env: OULAB_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 = library default). Env: OULAB_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Emit SVG plots where the command supports them. Env: OULAB_SVG.
    #[arg(long, global = true)]
    svg: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the closed-form constants table for the configured model.
    Constants,
    /// Simulate trajectories and emit per-time summary statistics.
    Simulate,
    /// Run the configured certificates and emit one row per bound.
    Certify,
    /// Run `certify` across model.epsilon_sweep into a single table.
    Sweep,
}

fn env_var(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.is_empty())
}

fn main() {
    let cli = Cli::parse();
    let config = cli
        .config
        .or_else(|| env_var("OULAB_CONFIG").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("oulab.toml"));
    let overrides = Overrides {
        out: cli.out.or_else(|| env_var("OULAB_OUT").map(PathBuf::from)),
        seed: cli
            .seed
            .or_else(|| env_var("OULAB_SEED").and_then(|v| v.parse().ok())),
        threads: cli
            .threads
            .or_else(|| env_var("OULAB_THREADS").and_then(|v| v.parse().ok())),
        svg: cli.svg
            || env_var("OULAB_SVG")
                .map(|v| v == "1" || v == "true")
                .unwrap_or(false),
    };
    let ctx = match prepare(&config, &overrides) {
        Ok(ctx) => ctx,
        Err(e) => {
            eprintln!("oulab: {}", e.message());
            std::process::exit(e.exit_code());
        }
    };
    let result = match cli.command {
        Command::Constants => cmd_constants(&ctx).map(|()| 0),
        Command::Simulate => cmd_simulate(&ctx).map(|()| 0),
        Command::Certify => cmd_certify(&ctx),
        Command::Sweep => cmd_sweep(&ctx),
    };
    match result {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("oulab: {}", e.message());
            std::process::exit(e.exit_code());
        }
    }
}
