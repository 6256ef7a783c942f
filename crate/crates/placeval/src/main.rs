//! Thin pipeline CLI: each subcommand runs one stage against a config file.
//!
//! Exit codes: 0 success, 1 usage error (bad flags or config), 2 data error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use placeval::pipeline::run_stage;
use placeval::{Error, RunConfig};

#[derive(Parser)]
#[command(name = "placeval", version, about = "Mobility-informed real-estate valuation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StageArgs {
    /// Config file, one `key = value` per line (`#` comments).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's root seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic city (pings, polygons, demographics, properties).
    Synth(StageArgs),
    /// Compress raw pings into stops.
    DetectStops(StageArgs),
    /// Infer home locations from night stops and attach demographics.
    InferHomes(StageArgs),
    /// Assemble the static + dynamic analysis table.
    BuildFeatures(StageArgs),
    /// Train the stacked model on the training split.
    Train(StageArgs),
    /// Evaluate the trained model on the holdout split.
    Evaluate(StageArgs),
    /// Shapley attribution of the trained model.
    Explain(StageArgs),
    /// Compare the static+dynamic stack against the static-only baseline.
    RunListprice(StageArgs),
    /// Per-kind dynamic-only tax-assessment models with attribution.
    RunTax(StageArgs),
}

impl Command {
    fn unpack(&self) -> (&'static str, &StageArgs) {
        match self {
            Command::Synth(a) => ("synth", a),
            Command::DetectStops(a) => ("detect-stops", a),
            Command::InferHomes(a) => ("infer-homes", a),
            Command::BuildFeatures(a) => ("build-features", a),
            Command::Train(a) => ("train", a),
            Command::Evaluate(a) => ("evaluate", a),
            Command::Explain(a) => ("explain", a),
            Command::RunListprice(a) => ("run-listprice", a),
            Command::RunTax(a) => ("run-tax", a),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version requests are not errors
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let (stage, args) = cli.command.unpack();
    let mut cfg = match RunConfig::from_file(&args.config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("placeval {stage}: {e}");
            return ExitCode::from(1);
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    match run_stage(stage, &cfg) {
        Ok(summary) => {
            for line in &summary.lines {
                eprintln!("placeval {stage}: {line}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("placeval {stage}: {e}");
            match e {
                Error::Config(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
