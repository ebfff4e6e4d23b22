/// `println!` that ignores a closed stdout instead of panicking.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

mod commands;
mod config;
mod output;
mod svg;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Runs low-rank momentum optimizer experiments on small synthetic problems.
#[derive(Debug, Parser)]
#[command(name = "lorapre", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// JSON experiment config.
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the optimizer seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Turns on the dense shadow oracle.
    #[arg(long)]
    shadow: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train once and write run.csv, bounds.json and summary.txt.
    Run(RunArgs),
    /// Train once per rank and write sweep.csv and chart.svg.
    SweepRank {
        #[command(flatten)]
        args: RunArgs,
        /// Comma-separated factor ranks.
        #[arg(long, value_delimiter = ',', required = true)]
        ranks: Vec<usize>,
    },
    /// Check the numerical invariants and print one line per check.
    Verify {
        /// Perturbs the factor coupling so the decay checks must fail.
        #[arg(long, hide = true)]
        corrupt_coupling: bool,
    },
}

/// Exit codes: 0 success, 1 failed check or I/O error, 2 bad config, 3 numeric abort.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Numeric(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Config(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Numeric(m) | Failure::Other(m) => m,
        }
    }
}

impl From<config::ConfigError> for Failure {
    fn from(e: config::ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(format!("i/o error: {e}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => commands::run(&args.config, args.out, args.seed, args.shadow),
        Command::SweepRank { args, ranks } => commands::sweep_rank(&args.config, &ranks, args.out, args.seed),
        Command::Verify { corrupt_coupling } => verify::run(corrupt_coupling),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
