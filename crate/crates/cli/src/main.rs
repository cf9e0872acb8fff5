//! `hipponet` command-line driver. Every command that takes a config writes
//! the fully resolved config to `config.json` in its output directory.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{resolve, Config, DEFAULT_OUT_DIR, OUT_DIR_ENV};
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "hipponet", version, about = "Hippocampal ROI late-fusion 3D CNN toolchain")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// JSON config file; see schema/config.schema.json.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Dotted-key override such as `optimizer.mu0=0.005`; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Replaces the master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct OutArgs {
    /// Output directory.
    #[arg(long, short, env = OUT_DIR_ENV, default_value = DEFAULT_OUT_DIR)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate phantom volumes as NIfTI files plus a dataset manifest.
    Synth(ConfigArgs),
    /// Check NIfTI volumes listed in a CSV and write a dataset manifest.
    Ingest {
        /// CSV with header `id,diagnosis,smri,md_dti`; paths relative to the CSV.
        #[arg(long)]
        list: PathBuf,
        #[command(flatten)]
        args: ConfigArgs,
    },
    /// Store the unshifted ROI tensors of every subject in the sample store.
    Extract(ConfigArgs),
    /// Record the balanced training plan and test sets in the manifest.
    Augment(ConfigArgs),
    /// Train one network and write its run log, summary and checkpoint.
    Train(ConfigArgs),
    /// Evaluate a checkpoint on test sets 0, 1 and 2.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        args: ConfigArgs,
    },
    /// Train every (input mode, ROI size, configuration) of the result tables.
    Sweep(ConfigArgs),
    /// Finite-difference check of every layer and of a small fusion network.
    Gradcheck {
        /// Seeds to check; each runs the full suite.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        /// Also write gradcheck.json to this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate run logs and optionally export one CSV per curve.
    Report {
        /// Run directories, or directories of run directories.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Directory for per-curve CSVs.
        #[arg(long)]
        curves: Option<PathBuf>,
    },
}

fn load(args: &ConfigArgs) -> Result<Config, CliError> {
    resolve(args.config.as_deref(), &args.overrides, args.seed)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => commands::synth(&load(&a)?, &a.out.out),
        Command::Ingest { list, args } => commands::ingest(&load(&args)?, &list, &args.out.out),
        Command::Extract(a) => commands::extract(&load(&a)?, &a.out.out),
        Command::Augment(a) => commands::augment(&load(&a)?, &a.out.out),
        Command::Train(a) => commands::train_command(&load(&a)?, &a.out.out),
        Command::Evaluate { checkpoint, args } => commands::evaluate_command(&load(&args)?, &checkpoint, &args.out.out),
        Command::Sweep(a) => commands::sweep_command(&load(&a)?, &a.out.out),
        Command::Gradcheck { seeds, out } => commands::gradcheck(&seeds, out.as_deref()),
        Command::Report { runs, curves } => commands::report(&runs, curves.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { error::exit::USAGE } else { error::exit::OK });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::from(error::exit::OK),
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.code())
        }
    }
}
