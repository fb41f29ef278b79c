mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dmdfm::ErrorKind;

#[derive(Parser)]
#[command(name = "dmdfm", version, about = "Simulate, diagnose and estimate high-dimensional dynamic factor panels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML config for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker thread cap; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Replace the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Simulate a panel from a model file or a Jacobian manifest.
    Simulate,
    /// Rank diagnostics and the chosen number of factors for a panel.
    SelectRank,
    /// Estimate parameters by simulated likelihood, Whittle likelihood or MCMC.
    Fit,
    /// Repeated simulate-and-estimate at known parameters.
    McStudy,
    /// Steady-state filter diagnostics for a model file.
    Validate,
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Numerical => 3,
        ErrorKind::Io => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(config) = cli.config else {
        eprintln!("error: --config is required");
        return ExitCode::from(2);
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let ctx = commands::Context {
        config,
        out: cli.out,
        seed: cli.seed,
    };
    let result = match cli.command {
        Command::Simulate => commands::simulate(&ctx),
        Command::SelectRank => commands::select_rank(&ctx),
        Command::Fit => commands::fit(&ctx),
        Command::McStudy => commands::mc_study(&ctx),
        Command::Validate => commands::validate(&ctx),
    };
    match result {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
