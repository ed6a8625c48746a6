use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wfgame_cli::{run, ExperimentConfig, ExperimentKind};

#[derive(Parser)]
#[command(name = "wfgame", version, about = "Power-allocation game experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for equilibrium spectra (CSV: d_ratio,trial,user,carrier,power).
    Solve(Common),
    /// Evaluate the uniqueness conditions of each realization (JSON).
    CheckUniqueness(Common),
    /// Sample rate regions and compare equilibria with Pareto optima (CSV).
    RateRegion(Common),
    /// Monte Carlo probability of each uniqueness condition (CSV).
    Montecarlo(Common),
    /// Check diagonal precoding against random precoders (JSON, exit 2 on a breach).
    VerifyTheorem1(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Root seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; all cores by default.
    #[arg(long)]
    workers: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Solve(a) => (ExperimentKind::Psd, a),
        Command::CheckUniqueness(a) => (ExperimentKind::CheckUniqueness, a),
        Command::RateRegion(a) => (ExperimentKind::RateRegion, a),
        Command::Montecarlo(a) => (ExperimentKind::UniquenessMc, a),
        Command::VerifyTheorem1(a) => (ExperimentKind::VerifyTheorem1, a),
    };
    let result = ExperimentConfig::load(&args.config).and_then(|mut cfg| {
        if let Some(seed) = args.seed {
            cfg.seed = seed;
        }
        if args.workers == Some(0) {
            return Err(wfgame_cli::CliError::Config("--workers must be >= 1".into()));
        }
        run(kind, &cfg, args.out.as_deref(), args.workers)
    });
    match result {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("wfgame: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
