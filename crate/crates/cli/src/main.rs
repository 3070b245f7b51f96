mod export;
mod files;
mod report;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::files::CliError;

#[derive(Parser)]
#[command(name = "modci", version, about = "Run tracking-and-fusion scenarios and score the results")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario for a range of seeds and write one record per seed.
    Simulate(SimulateArgs),
    /// Score run records: per-seed rows or cross-seed aggregates as CSV.
    Metrics(MetricsArgs),
    /// Per-seed wins and losses of one fusion method against another.
    Compare(CompareArgs),
    /// Dump a record's truth, measurements and estimates as CSV files.
    Export(ExportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodChoice {
    Ci,
    Modci,
    Bci,
    Mbci,
    /// CI and modified CI side by side.
    Both,
}

#[derive(clap::Args)]
pub struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// `a..b` (end exclusive), `a..=b`, or a single seed. Defaults to the
    /// config's seed.
    #[arg(long)]
    seeds: Option<String>,
    /// Override the config's fusion methods.
    #[arg(long, value_enum)]
    method: Option<MethodChoice>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Also run the no-association Kalman filter at each node.
    #[arg(long)]
    baseline_kf: bool,
}

#[derive(clap::Args)]
pub struct MetricsArgs {
    /// Record files or directories of records.
    #[arg(required = true)]
    records: Vec<PathBuf>,
    /// Print cross-seed medians and IQRs instead of per-seed rows.
    #[arg(long)]
    aggregate: bool,
    /// Write `metrics.csv` and `aggregate.csv` here instead of printing.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct CompareArgs {
    #[arg(required = true)]
    records: Vec<PathBuf>,
    #[arg(long, default_value = "ci")]
    baseline: String,
    #[arg(long, default_value = "modci")]
    challenger: String,
    /// Also write the full per-seed comparison as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct ExportArgs {
    record: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate::run(&a),
        Command::Metrics(a) => report::metrics(&a),
        Command::Compare(a) => report::compare(&a),
        Command::Export(a) => export::run(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Config(_) => 2,
                CliError::Runtime(_) => 3,
            })
        }
    }
}
