//! Experiment harness: configured runs of the geometric constructions and
//! estimates, with JSON/CSV reports.

pub mod config;
pub mod estimates;
pub mod experiments;
pub mod report;
pub mod solutions;

use std::path::Path;

pub use config::{ExperimentConfig, ExperimentKind, Overrides};
pub use experiments::Setup;
pub use report::{exit_code, Report, RunSummary, Status};
pub use solutions::SolutionFamily;

use crate::error::HarnessError;

fn run_component(kind: ExperimentKind, s: &Setup) -> Result<Report, HarnessError> {
    let r = match kind {
        ExperimentKind::Sections => experiments::sections_experiment(s),
        ExperimentKind::Normalize => experiments::normalize_experiment(s),
        ExperimentKind::Slide => experiments::slide_experiment(s),
        ExperimentKind::Measure => experiments::measure_experiment(s),
        ExperimentKind::Doubling => experiments::doubling_experiment(s),
        ExperimentKind::Decay => estimates::decay_experiment(s),
        ExperimentKind::Harnack => estimates::harnack_experiment(s),
        ExperimentKind::Cover => experiments::cover_experiment(s),
        ExperimentKind::All => unreachable!("`all` is expanded by the caller"),
    };
    r.map_err(|e| e.context(kind.name()))
}

/// Runs the configured experiment in memory.
///
/// A single experiment propagates gate errors (budget, height, hypothesis)
/// so the caller can map them to an exit code; under `all` they become
/// not-applicable reports and the remaining components still run.
pub fn run(config: &ExperimentConfig) -> Result<RunSummary, HarnessError> {
    let setup = Setup::new(config)?;
    let kind = config.experiment.kind;
    let reports = if kind == ExperimentKind::All {
        let mut out = Vec::new();
        for k in ExperimentKind::COMPONENTS {
            log::info!("running {}", k.name());
            match run_component(k, &setup) {
                Ok(r) => out.push(r),
                Err(e) if report::error_exit_code(&e) == 3 => {
                    let mut r = Report::new(k.name());
                    r.not_applicable(e.to_string());
                    out.push(r.finish());
                }
                Err(e) => return Err(e),
            }
        }
        out
    } else {
        vec![run_component(kind, &setup)?]
    };
    Ok(RunSummary::new(kind.name(), config.clone(), reports))
}

/// Runs and writes `summary.json` plus tables under the configured output
/// directory.
pub fn run_and_write(config: &ExperimentConfig) -> Result<RunSummary, HarnessError> {
    let summary = run(config)?;
    summary.write(Path::new(&config.output_dir))?;
    Ok(summary)
}
