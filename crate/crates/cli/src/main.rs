mod bench;
mod config;
mod error;
mod extract;
mod train;
mod visualize;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::error::CliResult;

/// Motion features from frame sequences: extraction, visualization,
/// throughput benchmarking and a toy two-branch classifier.
///
/// Exit status: 0 ok, 1 runtime failure, 2 configuration error, 3 I/O
/// error, 4 failed verification.
#[derive(Parser)]
#[command(name = "motionforge", version)]
struct Cli {
    /// JSON file of flat dotted keys, e.g. {"extract.segments": 4}. Flags
    /// override the file; MOTIONFORGE_<SUBCOMMAND>_<FIELD> variables
    /// override flags
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write motion features for sampled segments as MTF1 files
    Extract(extract::ExtractArgs),
    /// Write source, RGBDiff and ME heatmap PNGs for frame pairs
    Visualize(visualize::VisualizeArgs),
    /// Time motion representations over consecutive frame pairs
    Bench(bench::BenchArgs),
    /// Train the toy classifier on synthetic moving-object clips
    TrainToy(train::TrainArgs),
    /// Score a trained checkpoint on its validation clips
    Eval(train::EvalArgs),
}

fn run(cli: Cli, matches: &clap::ArgMatches) -> CliResult<()> {
    let file = match &cli.config {
        Some(path) => config::load_file(path, &Cli::command())?,
        None => Default::default(),
    };
    let env = config::process_env();
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    match cli.command {
        Command::Extract(a) => extract::run(config::resolve(name, a, sub, &file, &env)?),
        Command::Visualize(a) => visualize::run(config::resolve(name, a, sub, &file, &env)?),
        Command::Bench(a) => bench::run(config::resolve(name, a, sub, &file, &env)?),
        Command::TrainToy(a) => train::run_train(config::resolve(name, a, sub, &file, &env)?),
        Command::Eval(a) => train::run_eval(config::resolve(name, a, sub, &file, &env)?),
    }
}

fn main() -> ExitCode {
    let matches = Cli::command().get_matches();
    let cli = Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit());
    match run(cli, &matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
