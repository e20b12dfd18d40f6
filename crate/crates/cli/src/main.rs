use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lma_core::harness::{exit_code, run_and_write, ExperimentConfig, ExperimentKind, Overrides, RunSummary};
use lma_core::HarnessError;

/// Runs the section, sliding and estimate experiments from a TOML config.
///
/// Exit codes: 0 pass, 1 failed check or runtime error, 2 configuration
/// error, 3 not applicable (a hypothesis or budget gate stopped the run).
#[derive(Parser, Debug)]
#[command(name = "lma", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Section geometry: containment, volume ratios, engulfing.
    Sections(RunArgs),
    /// John normalization and rescaling of the problem.
    Normalize(RunArgs),
    /// Sliding paraboloids on a quadratic test field.
    Slide(RunArgs),
    /// Measure estimate over generated solutions.
    Measure(RunArgs),
    /// Doubling estimate with the correction barrier.
    Doubling(RunArgs),
    /// Critical density and power decay of the distribution function.
    Decay(RunArgs),
    /// Single-section and chained Harnack quotients.
    Harnack(RunArgs),
    /// Vitali covers and ink-spots growth.
    Cover(RunArgs),
    /// Every experiment in turn.
    All(RunArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed, overriding `experiment.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Nodes per grid axis, overriding `grid.nodes`.
    #[arg(long)]
    grid: Option<usize>,
}

impl Command {
    fn split(self) -> (ExperimentKind, RunArgs) {
        match self {
            Command::Sections(a) => (ExperimentKind::Sections, a),
            Command::Normalize(a) => (ExperimentKind::Normalize, a),
            Command::Slide(a) => (ExperimentKind::Slide, a),
            Command::Measure(a) => (ExperimentKind::Measure, a),
            Command::Doubling(a) => (ExperimentKind::Doubling, a),
            Command::Decay(a) => (ExperimentKind::Decay, a),
            Command::Harnack(a) => (ExperimentKind::Harnack, a),
            Command::Cover(a) => (ExperimentKind::Cover, a),
            Command::All(a) => (ExperimentKind::All, a),
        }
    }
}

fn execute(kind: ExperimentKind, args: RunArgs) -> Result<RunSummary, HarnessError> {
    let overrides = Overrides { seed: args.seed, grid: args.grid, out: args.out, experiment: Some(kind) };
    let config = ExperimentConfig::load(&args.config)?.apply(&overrides)?;
    run_and_write(&config)
}

fn print_summary(summary: &RunSummary) {
    for r in &summary.reports {
        println!("{:<10} {:?}", r.experiment, r.status);
        for c in r.failed_checks() {
            println!("  failed: {} = {} ({} {})", c.name, c.value, c.relation, c.bound);
        }
        for n in &r.notes {
            println!("  note: {n}");
        }
    }
    println!("overall    {:?}", summary.status);
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let (kind, args) = Cli::parse().command.split();
    let result = execute(kind, args);
    match &result {
        Ok(summary) => print_summary(summary),
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(exit_code(&result) as u8)
}
