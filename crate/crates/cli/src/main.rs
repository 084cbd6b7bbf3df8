use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ilq_cli::{commands, parse_seed, CliError, GainMode, Problem, Report};

/// Indefinite stochastic LQ control: feasibility, Riccati synthesis and Monte Carlo checks.
#[derive(Debug, Parser)]
#[command(name = "ilq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Find a member of the LMI set (or check the supplied `p_hat`).
    Feasible { file: PathBuf },
    /// Solve the algebraic Riccati equation and verify the closed loop.
    Solve {
        file: PathBuf,
        /// Also write the finite-horizon Riccati trajectory to this CSV file.
        #[arg(long)]
        gdre_csv: Option<PathBuf>,
    },
    /// Simulate the closed loop and write trajectory.csv and report.json.
    Simulate {
        file: PathBuf,
        /// `optimal`, `zero`, or a path to a JSON array of gain rows.
        #[arg(long)]
        gain: GainMode,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn load(file: &Path) -> Result<Problem, CliError> {
    let mut problem = Problem::load(file)?;
    if let Ok(raw) = std::env::var("ILQ_SEED") {
        problem.override_seed(parse_seed(&raw)?);
    }
    Ok(problem)
}

fn run(cli: Cli) -> Result<Report, CliError> {
    match cli.command {
        Command::Feasible { file } => Ok(commands::feasible(&load(&file)?)),
        Command::Solve { file, gdre_csv } => commands::solve(&load(&file)?, gdre_csv.as_deref()),
        Command::Simulate { file, gain, out } => commands::simulate(&load(&file)?, &gain, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Help and version requests are successes; usage errors map to 1.
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(report) => {
            print!("{}", report.to_json());
            if let Some(msg) = &report.message {
                eprintln!("error: {msg}");
            }
            ExitCode::from(report.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
