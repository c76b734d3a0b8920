//! `specplan`: run simulations and parameter grids, analyze and replay event
//! logs, and host the session server.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

mod commands;
mod settings;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use specplan_core::simkit::Study;
use specplan_core::Micros;

use settings::List;

#[derive(Debug, Parser)]
#[command(name = "specplan", version, about = "Speculative agent planning toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one plan and write its event log and metrics.
    Simulate(SimulateArgs),
    /// Run a parameter sweep and write raw and aggregate CSVs.
    Grid(GridArgs),
    /// Recompute metrics from stored event logs.
    Analyze(AnalyzeArgs),
    /// Host the session server.
    Serve(ServeArgs),
    /// Print the presentation-ordered transcript of an event log.
    Replay(ReplayArgs),
}

/// Plan shape and agent speeds shared by `simulate` and `grid`.
#[derive(Debug, Args)]
struct WorldFlags {
    /// Plan length.
    #[arg(long)]
    n: Option<usize>,
    /// Approximation step latency, seconds.
    #[arg(long, value_parser = settings::seconds)]
    ta: Option<Micros>,
    /// Target step latency, seconds.
    #[arg(long, value_parser = settings::seconds)]
    tt: Option<Micros>,
    #[arg(long)]
    tok_a: Option<u64>,
    #[arg(long)]
    tok_t: Option<u64>,
    /// Execution time per step, seconds.
    #[arg(long, value_parser = settings::seconds)]
    exec: Option<Micros>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct OutputFlags {
    /// Settings file (JSON or YAML). Flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for all written files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overwrite existing output files.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    output: OutputFlags,
    #[command(flatten)]
    world: WorldFlags,
    /// Approximation accuracy in [0, 1].
    #[arg(long)]
    acc: Option<f64>,
    /// Speculation bound.
    #[arg(long)]
    k: Option<usize>,
    /// Budget of a simulated impatient user.
    #[arg(long)]
    interrupts: Option<usize>,
    #[arg(long, value_parser = settings::seconds)]
    wait_low: Option<Micros>,
    #[arg(long, value_parser = settings::seconds)]
    wait_high: Option<Micros>,
}

#[derive(Debug, Args)]
struct GridArgs {
    #[command(flatten)]
    output: OutputFlags,
    #[command(flatten)]
    world: WorldFlags,
    #[arg(long, value_enum)]
    study: Option<StudyArg>,
    /// Comma-separated accuracies.
    #[arg(long)]
    accuracies: Option<List<f64>>,
    /// Comma-separated speculation bounds (accuracy-k).
    #[arg(long)]
    ks: Option<List<usize>>,
    /// Comma-separated approximation latencies in seconds (speed).
    #[arg(long)]
    speeds: Option<List<f64>>,
    /// Repetitions per cell.
    #[arg(long)]
    seeds: Option<usize>,
    /// Speculation bound for the speed and interruption studies.
    #[arg(long)]
    k: Option<usize>,
    /// Accuracy for the interruption study.
    #[arg(long)]
    acc: Option<f64>,
    /// Comma-separated interrupt budgets (interruption).
    #[arg(long)]
    counts: Option<List<usize>>,
    /// Simulations per interrupt budget.
    #[arg(long)]
    sims: Option<usize>,
    #[arg(long, value_parser = settings::seconds)]
    wait_low: Option<Micros>,
    #[arg(long, value_parser = settings::seconds)]
    wait_high: Option<Micros>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum StudyArg {
    AccuracyK,
    Speed,
    Interruption,
}

impl From<StudyArg> for Study {
    fn from(s: StudyArg) -> Self {
        match s {
            StudyArg::AccuracyK => Study::AccuracyK,
            StudyArg::Speed => Study::Speed,
            StudyArg::Interruption => Study::Interruption,
        }
    }
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Event logs (line-delimited JSON).
    #[arg(required = true)]
    logs: Vec<PathBuf>,
    /// Token price table (JSON or YAML).
    #[arg(long)]
    prices: Option<PathBuf>,
    /// Speculation bound the logs ran with; enables breaking points.
    #[arg(long)]
    k: Option<usize>,
    /// Accuracy buckets of the breakdown CSV.
    #[arg(long, default_value_t = 10)]
    buckets: usize,
    /// Write `analysis.json` and `accuracy_breakdown.csv` here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Write each session's event log under this directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    log: PathBuf,
    /// Print only the final authoritative steps.
    #[arg(long = "final")]
    final_only: bool,
}

/// Marks errors caused by the invocation rather than by the run.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Grid(a) => commands::grid(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Serve(a) => commands::serve(a),
        Command::Replay(a) => commands::replay(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<UsageError>()) {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
