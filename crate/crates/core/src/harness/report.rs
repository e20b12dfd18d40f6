//! Run reports: JSON summaries, CSV tables and `x,y` plot data.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

use super::config::ExperimentConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    NotApplicable,
}

impl Status {
    pub fn exit_code(&self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Fail => 1,
            Status::NotApplicable => 3,
        }
    }

    /// Fail dominates; pass if anything passed; otherwise not applicable.
    pub fn combine(all: impl IntoIterator<Item = Status>) -> Status {
        let mut any_pass = false;
        let mut any = false;
        for s in all {
            any = true;
            match s {
                Status::Fail => return Status::Fail,
                Status::Pass => any_pass = true,
                Status::NotApplicable => {}
            }
        }
        if any_pass || !any {
            Status::Pass
        } else {
            Status::NotApplicable
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub name: String,
    pub holds: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormBudget {
    pub name: String,
    pub measured: f64,
    pub budget: f64,
    pub within: bool,
}

/// A constant used by the run and where it came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantRecord {
    pub name: String,
    pub value: f64,
    pub provenance: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    /// `le` when `value <= bound` is required, `ge` for `value >= bound`.
    pub relation: String,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table { name: name.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|x| x.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl PlotData {
    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x", "y"])?;
        for (x, y) in &self.points {
            w.write_record([x.to_string(), y.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Outcome of one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiment: String,
    pub status: Status,
    pub hypotheses: Vec<Hypothesis>,
    pub norm_budgets: Vec<NormBudget>,
    pub constants: Vec<ConstantRecord>,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    /// Table and plot file names relative to the experiment directory.
    pub files: Vec<String>,
    #[serde(skip)]
    pub tables: Vec<Table>,
    #[serde(skip)]
    pub plots: Vec<PlotData>,
    #[serde(skip)]
    not_applicable: bool,
}

impl Report {
    pub fn new(experiment: &str) -> Self {
        Report {
            experiment: experiment.into(),
            status: Status::Pass,
            hypotheses: Vec::new(),
            norm_budgets: Vec::new(),
            constants: Vec::new(),
            checks: Vec::new(),
            notes: Vec::new(),
            files: Vec::new(),
            tables: Vec::new(),
            plots: Vec::new(),
            not_applicable: false,
        }
    }

    pub fn hypothesis(&mut self, name: &str, holds: bool, detail: impl Into<String>) -> bool {
        self.hypotheses.push(Hypothesis { name: name.into(), holds, detail: detail.into() });
        holds
    }

    pub fn budget(&mut self, name: &str, measured: f64, budget: f64) -> bool {
        let within = measured <= budget;
        self.norm_budgets.push(NormBudget { name: name.into(), measured, budget, within });
        within
    }

    pub fn constant(&mut self, name: &str, value: f64, provenance: impl Into<String>) {
        self.constants.push(ConstantRecord { name: name.into(), value, provenance: provenance.into() });
    }

    pub fn check_le(&mut self, name: &str, value: f64, bound: f64) -> bool {
        let pass = value <= bound;
        self.checks.push(Check { name: name.into(), value, bound, relation: "le".into(), pass });
        pass
    }

    pub fn check_ge(&mut self, name: &str, value: f64, bound: f64) -> bool {
        let pass = value >= bound;
        self.checks.push(Check { name: name.into(), value, bound, relation: "ge".into(), pass });
        pass
    }

    /// Records a yes/no check as `value = 1` against `bound = 1`.
    pub fn check_true(&mut self, name: &str, ok: bool) -> bool {
        self.check_ge(name, if ok { 1.0 } else { 0.0 }, 1.0)
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    pub fn table(&mut self, t: Table) {
        self.tables.push(t);
    }

    pub fn plot(&mut self, name: &str, points: Vec<(f64, f64)>) {
        self.plots.push(PlotData { name: name.into(), points });
    }

    /// Marks a run whose hypothesis failed; conclusions are not asserted.
    pub fn not_applicable(&mut self, reason: impl Into<String>) {
        self.not_applicable = true;
        self.notes.push(reason.into());
    }

    pub fn finish(mut self) -> Self {
        self.status = if self.checks.iter().any(|c| !c.pass) {
            Status::Fail
        } else if self.not_applicable {
            Status::NotApplicable
        } else {
            Status::Pass
        };
        self.files = self
            .tables
            .iter()
            .map(|t| format!("{}.csv", t.name))
            .chain(self.plots.iter().map(|p| format!("{}.xy.csv", p.name)))
            .collect();
        self
    }

    pub fn failed_checks(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }

    /// Writes tables and plot files into `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<(), HarnessError> {
        fs::create_dir_all(dir)?;
        for t in &self.tables {
            t.write_csv(&dir.join(format!("{}.csv", t.name)))?;
        }
        for p in &self.plots {
            p.write(&dir.join(format!("{}.xy.csv", p.name)))?;
        }
        Ok(())
    }
}

/// Top-level summary written as `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub experiment: String,
    pub status: Status,
    pub config: ExperimentConfig,
    pub reports: Vec<Report>,
}

impl RunSummary {
    pub fn new(experiment: &str, config: ExperimentConfig, reports: Vec<Report>) -> Self {
        let status = Status::combine(reports.iter().map(|r| r.status));
        RunSummary { schema_version: SCHEMA_VERSION, experiment: experiment.into(), status, config, reports }
    }

    /// `summary.json` plus one directory of tables and plots per report.
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        fs::create_dir_all(dir)?;
        for r in &self.reports {
            r.write_files(&dir.join(&r.experiment))?;
        }
        let json = serde_json::to_string_pretty(self)?;
        fs::write(dir.join("summary.json"), json + "\n")?;
        Ok(())
    }
}

/// Process exit code: 0 pass, 1 failure, 2 configuration error, 3 not
/// applicable (a hypothesis or budget gate stopped the run).
pub fn exit_code(result: &Result<RunSummary, HarnessError>) -> i32 {
    match result {
        Ok(s) => s.status.exit_code(),
        Err(e) => error_exit_code(e),
    }
}

pub fn error_exit_code(e: &HarnessError) -> i32 {
    match e {
        HarnessError::Config(_) => 2,
        HarnessError::HypothesisViolation(_)
        | HarnessError::NormBudgetExceeded(_)
        | HarnessError::HeightBudgetExceeded { .. } => 3,
        HarnessError::Context { source, .. } => error_exit_code(source),
        _ => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::ConfigError;

    #[test]
    fn status_rules() {
        let mut r = Report::new("x");
        r.check_le("a", 1.0, 2.0);
        assert_eq!(r.clone().finish().status, Status::Pass);
        r.not_applicable("gate");
        assert_eq!(r.clone().finish().status, Status::NotApplicable);
        r.check_ge("b", 1.0, 2.0);
        assert_eq!(r.finish().status, Status::Fail);
        assert_eq!(Status::combine([Status::Pass, Status::NotApplicable]), Status::Pass);
        assert_eq!(Status::combine([Status::NotApplicable]), Status::NotApplicable);
        assert_eq!(Status::combine([Status::Pass, Status::Fail]), Status::Fail);
    }

    #[test]
    fn exit_codes() {
        let cfg: Result<RunSummary, HarnessError> = Err(ConfigError::Missing("grid.nodes".into()).into());
        assert_eq!(exit_code(&cfg), 2);
        let na: Result<RunSummary, HarnessError> =
            Err(HarnessError::NormBudgetExceeded("f".into()).context("decay"));
        assert_eq!(exit_code(&na), 3);
        let other: Result<RunSummary, HarnessError> = Err(HarnessError::Serialize("x".into()));
        assert_eq!(exit_code(&other), 1);
    }

    #[test]
    fn csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Table::new("t", &["x", "y"]);
        t.push(vec![0.5, 1e-3]);
        t.write_csv(&dir.path().join("t.csv")).unwrap();
        let text = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
        assert_eq!(text, "x,y\n0.5,0.001\n");
    }
}
