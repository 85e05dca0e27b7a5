mod commands;
mod config;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use commands::*;
use config::FileConfig;

/// TB chest X-ray screening: feature extraction, dataset assembly, training.
#[derive(Debug, Parser)]
#[command(name = "tbnet", version, about)]
struct Cli {
    /// key=value settings file; explicit flags override it
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract haar/lbp feature maps, match a template, and pool the results
    Extract(ExtractArgs),
    /// Assemble a manifest for an augmentation case and split it
    Build(BuildArgs),
    /// Train a network on a manifest and write checkpoint + curves
    Train(TrainArgs),
    /// Score a checkpoint against a manifest split
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients in double precision
    Gradcheck(GradcheckArgs),
    /// Generate a labeled synthetic image corpus with ROI ground truth
    Synth(SynthArgs),
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let cfg = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Extract(args) => cmd_extract(args, cfg),
        Command::Build(args) => cmd_build(args, cfg),
        Command::Train(args) => cmd_train(args, cfg),
        Command::Eval(args) => cmd_eval(args, cfg),
        Command::Gradcheck(args) => cmd_gradcheck(args, cfg),
        Command::Synth(args) => cmd_synth(args, cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
