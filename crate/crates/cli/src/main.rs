use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use softlabel_cli::commands;
use softlabel_cli::config::{Overrides, RunConfig};
use softlabel_cli::errors::CliError;

/// Annotator-weighted soft-label training and its baselines, driven by one
/// run document per invocation.
#[derive(Debug, Parser)]
#[command(name = "softlabel", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic benchmark dataset files
    GenData(Common),
    /// Train the configured method and save the model
    Train(TrainArgs),
    /// Evaluate a saved model on the test split
    Eval(ModelArgs),
    /// Run every registered method across the configured seeds
    Compare(CompareArgs),
    /// Rank feature blocks by how much masking them moves the logits
    Explain(ModelArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Run document (TOML)
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Replace the seed list (and the synthetic data seed) with one seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Method id override
    #[arg(long)]
    method: Option<String>,
    /// Continue a bi-level run from the checkpoint in the output directory
    #[arg(long)]
    resume: bool,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[command(flatten)]
    common: Common,
    /// Model file; defaults to model.json in the output directory
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    /// Worker threads for per-method fan-out
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: u16,
}

fn load(common: &Common, method: Option<&str>) -> Result<RunConfig, CliError> {
    let overrides = Overrides {
        seed: common.seed,
        out: common.out.clone(),
        method: method.map(String::from),
    };
    RunConfig::load(&common.config, &overrides)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(common) => commands::gen_data(&load(&common, None)?),
        Command::Train(args) => {
            let config = load(&args.common, args.method.as_deref())?;
            commands::train(&config, args.resume)
        }
        Command::Eval(args) => {
            let config = load(&args.common, None)?;
            commands::eval(&config, args.model.as_deref())
        }
        Command::Compare(args) => {
            let config = load(&args.common, None)?;
            commands::compare(&config, usize::from(args.jobs))
        }
        Command::Explain(args) => {
            let config = load(&args.common, None)?;
            commands::explain(&config, args.model.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
