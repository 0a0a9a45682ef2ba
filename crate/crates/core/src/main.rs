use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qeuler::experiment::{execute, load_config, Command, EXIT_CONFIG};

/// Exact simulation of post-selected nonlinear amplitude maps and the quantum
/// Euler integrator.
#[derive(Parser)]
#[command(name = "qeuler", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides `run.seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory receiving the JSON report and CSV artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Print the written files and the outcome to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Check the map or ODE system and report sparsity, norm bounds and conservation.
    Validate,
    /// Resolve epsilon and report the copy budget.
    Plan,
    /// Iterate a polynomial map.
    Iterate,
    /// Integrate an ODE system with the quantum Euler map.
    Integrate,
    /// Compare noisy and ideal iterates against the error bound.
    NoiseStudy,
    /// Evaluate observables along the trajectory.
    Observe,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Validate => Command::Validate,
            Cmd::Plan => Command::Plan,
            Cmd::Iterate => Command::Iterate,
            Cmd::Integrate => Command::Integrate,
            Cmd::NoiseStudy => Command::NoiseStudy,
            Cmd::Observe => Command::Observe,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(path) = cli.config else {
        eprintln!("error: --config PATH is required");
        return ExitCode::from(EXIT_CONFIG as u8);
    };
    let mut config = match load_config(&path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    if let Some(seed) = cli.seed {
        config.run.seed = seed;
    }
    let outcome = execute(cli.command.into(), &config, &cli.out);
    if let Some(msg) = &outcome.message {
        eprintln!("{msg}");
    }
    if cli.verbose {
        for f in &outcome.files {
            eprintln!("wrote {}", f.display());
        }
        eprintln!("exit code {}", outcome.exit_code);
    }
    ExitCode::from(outcome.exit_code as u8)
}
