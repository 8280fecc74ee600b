use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nde_cli::commands::{self, Outcome};
use nde_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "nde", version, about = "Bounded solutions of neutral difference equations")]
struct Cli {
    /// Config file, or a preset: example1, example2, sturm-liouville, zero, family-linear.
    #[arg(long, global = true, default_value = "example1")]
    config: String,
    /// Output directory (defaults to the config's [output] dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the hypotheses and write report.json.
    Check,
    /// Solve by fixed-point iteration and write solution.csv and stats.json.
    Solve {
        /// Constant initial guess.
        #[arg(long, allow_negative_numbers = true)]
        initial: Option<f64>,
    },
    /// Residuals of a CSV with columns n,x.
    Verify {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1e-9)]
        threshold: f64,
        /// Compare residuals relative to the size of the equation's terms.
        #[arg(long)]
        relative: bool,
    },
    /// Solve a parameter family and check continuous dependence.
    Sweep {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Measure-of-noncompactness ratio trials.
    Mnc {
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    let cfg = RunConfig::load(&cli.config)?;
    let out = cli.out.unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    let seed = |s: Option<u64>| s.unwrap_or(cfg.analysis.seed);
    Ok(match cli.command {
        Command::Check => commands::check(&cfg, &out)?.0,
        Command::Solve { initial } => commands::solve(&cfg, &out, initial)?.0,
        Command::Verify { input, threshold, relative } => commands::verify(&cfg, &input, &out, threshold, relative)?.0,
        Command::Sweep { seed: s } => commands::sweep(&cfg, &out, seed(s))?.0,
        Command::Mnc { seed: s } => commands::mnc(&cfg, &out, seed(s))?.0,
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            ExitCode::from(outcome.exit_code())
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
