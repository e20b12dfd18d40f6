//! Experiment configuration: TOML ingestion, validation and CLI overrides.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::ConfigError;
use crate::geometry::{CosinePerturbed, Grid, Potential, QuadraticForm, RadialPotential, SharedFunction, StructuralConstants};

use super::solutions::SolutionFamily;

/// Harness experiments run in the plane.
pub const DIM: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialFamily {
    /// `c |x|^2 / 2`; param `scale` (default 1).
    Quadratic,
    /// `(x₁²/s + s x₂²) / 2`; param `s` (default 4).
    Eccentric,
    /// `Σ (x_i²/2 + η cos(ω x_i)/ω²)`; params `eta` (0.3), `omega` (4).
    Cosine,
    /// `RadialPotential`; params `c0` (1), `c1` (0.5).
    Radial,
}

impl FromStr for PotentialFamily {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "quadratic" => Ok(PotentialFamily::Quadratic),
            "eccentric" => Ok(PotentialFamily::Eccentric),
            "cosine" => Ok(PotentialFamily::Cosine),
            "radial" => Ok(PotentialFamily::Radial),
            _ => Err(invalid("potential.family", format!("unknown family `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Sections,
    Normalize,
    Slide,
    Measure,
    Doubling,
    Decay,
    Harnack,
    Cover,
    All,
}

impl ExperimentKind {
    pub const COMPONENTS: [ExperimentKind; 8] = [
        ExperimentKind::Sections,
        ExperimentKind::Normalize,
        ExperimentKind::Slide,
        ExperimentKind::Measure,
        ExperimentKind::Doubling,
        ExperimentKind::Decay,
        ExperimentKind::Harnack,
        ExperimentKind::Cover,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Sections => "sections",
            ExperimentKind::Normalize => "normalize",
            ExperimentKind::Slide => "slide",
            ExperimentKind::Measure => "measure",
            ExperimentKind::Doubling => "doubling",
            ExperimentKind::Decay => "decay",
            ExperimentKind::Harnack => "harnack",
            ExperimentKind::Cover => "cover",
            ExperimentKind::All => "all",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        ExperimentKind::COMPONENTS
            .iter()
            .chain(std::iter::once(&ExperimentKind::All))
            .find(|k| k.name() == s)
            .copied()
            .ok_or_else(|| invalid("experiment.name", format!("unknown experiment `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub family: PotentialFamily,
    pub params: Vec<(String, f64)>,
}

impl PotentialSpec {
    fn param(&self, key: &str, default: f64) -> f64 {
        self.params.iter().find(|(k, _)| k == key).map(|p| p.1).unwrap_or(default)
    }

    pub fn function(&self) -> SharedFunction {
        match self.family {
            PotentialFamily::Quadratic => Arc::new(QuadraticForm::scaled(DIM, self.param("scale", 1.0))),
            PotentialFamily::Eccentric => Arc::new(QuadraticForm::eccentric(DIM, self.param("s", 4.0))),
            PotentialFamily::Cosine => {
                Arc::new(CosinePerturbed::new(DIM, self.param("eta", 0.3), self.param("omega", 4.0)))
            }
            PotentialFamily::Radial => {
                Arc::new(RadialPotential::new(DIM, self.param("c0", 1.0), self.param("c1", 0.5)))
            }
        }
    }

    /// The potential over the grid, analytic derivatives cached at nodes.
    pub fn build(&self, grid: &GridSpec) -> Result<Potential, ConfigError> {
        let g = grid.grid()?;
        Potential::analytic(g, self.function()).map_err(|e| invalid("potential", e.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Nodes per axis.
    pub nodes: usize,
    pub half_width: f64,
}

impl GridSpec {
    pub fn grid(&self) -> Result<Grid, ConfigError> {
        Grid::centered(DIM, self.half_width, self.nodes).map_err(|e| invalid("grid.nodes", e.to_string()))
    }
}

/// Calibrated constants of the estimate chain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateConstants {
    /// Paraboloid opening `a`.
    pub opening: f64,
    pub alpha1: f64,
    pub m1: f64,
    pub delta1: f64,
    /// Critical-density constants `M` and `δ`.
    pub m: f64,
    pub delta: f64,
    /// Smallest accepted fitted decay exponent.
    pub eps_decay: f64,
    pub eps3: f64,
    pub eps4: f64,
    pub eps5: f64,
    pub h0: f64,
    pub tau: f64,
    pub theta0: f64,
    pub k_hat: f64,
    pub alpha_star: f64,
    pub doubling_eps: f64,
}

impl EstimateConstants {
    /// Covering dilation `K = 2 θ₀²`.
    pub fn covering_k(&self) -> f64 {
        2.0 * self.theta0 * self.theta0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub solutions: SolutionFamily,
    pub samples: usize,
    pub calibration_samples: usize,
    pub test_samples: usize,
    /// Height of the instance section `S_u(0, height)`.
    pub height: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub potential: PotentialSpec,
    pub grid: GridSpec,
    pub constants: StructuralConstants,
    pub estimates: EstimateConstants,
    pub experiment: ExperimentSpec,
    /// Not serialized, so summaries do not depend on where they are written.
    #[serde(skip)]
    pub output_dir: PathBuf,
}

/// Command-line overrides applied after parsing.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub grid: Option<usize>,
    pub out: Option<PathBuf>,
    pub experiment: Option<ExperimentKind>,
}

pub(crate) fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.into(), reason: reason.into() }
}

fn lookup<'a>(root: &'a Table, path: &str) -> Option<&'a Value> {
    let mut parts = path.split('.');
    let mut cur = root.get(parts.next()?)?;
    for p in parts {
        cur = cur.as_table()?.get(p)?;
    }
    Some(cur)
}

fn opt_f64(root: &Table, path: &str) -> Result<Option<f64>, ConfigError> {
    match lookup(root, path) {
        None => Ok(None),
        Some(Value::Float(x)) => Ok(Some(*x)),
        Some(Value::Integer(i)) => Ok(Some(*i as f64)),
        Some(v) => Err(invalid(path, format!("expected a number, got {}", v.type_str()))),
    }
}

fn req_f64(root: &Table, path: &str) -> Result<f64, ConfigError> {
    opt_f64(root, path)?.ok_or_else(|| ConfigError::Missing(path.into()))
}

fn opt_usize(root: &Table, path: &str) -> Result<Option<usize>, ConfigError> {
    match lookup(root, path) {
        None => Ok(None),
        Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as usize)),
        Some(v) => Err(invalid(path, format!("expected a nonnegative integer, got {v}"))),
    }
}

fn req_str<'a>(root: &'a Table, path: &str) -> Result<&'a str, ConfigError> {
    match lookup(root, path) {
        None => Err(ConfigError::Missing(path.into())),
        Some(Value::String(s)) => Ok(s),
        Some(v) => Err(invalid(path, format!("expected a string, got {}", v.type_str()))),
    }
}

fn positive(path: &str, x: f64) -> Result<f64, ConfigError> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(invalid(path, format!("must be positive, got {x}")))
    }
}

fn unit_open(path: &str, x: f64) -> Result<f64, ConfigError> {
    if x > 0.0 && x < 1.0 {
        Ok(x)
    } else {
        Err(invalid(path, format!("must lie in (0, 1), got {x}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let root: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;

        let family: PotentialFamily = req_str(&root, "potential.family")?.parse()?;
        let mut params = Vec::new();
        if let Some(v) = lookup(&root, "potential.params") {
            let t = v.as_table().ok_or_else(|| invalid("potential.params", "expected a table"))?;
            for (k, _) in t {
                let path = format!("potential.params.{k}");
                params.push((k.clone(), positive(&path, req_f64(&root, &path)?)?));
            }
        }
        let potential = PotentialSpec { family, params };

        let nodes = opt_usize(&root, "grid.nodes")?.ok_or_else(|| ConfigError::Missing("grid.nodes".into()))?;
        if nodes < 16 {
            return Err(invalid("grid.nodes", format!("need at least 16 nodes per axis, got {nodes}")));
        }
        let half_width = positive("grid.half_width", opt_f64(&root, "grid.half_width")?.unwrap_or(2.0))?;
        let grid = GridSpec { nodes, half_width };

        let constants = StructuralConstants {
            lambda: req_f64(&root, "constants.lambda")?,
            big_lambda: req_f64(&root, "constants.big_lambda")?,
            lambda_tilde: req_f64(&root, "constants.lambda_tilde")?,
            big_lambda_tilde: req_f64(&root, "constants.big_lambda_tilde")?,
            p: req_f64(&root, "constants.p")?,
        };
        constants.validate(DIM).map_err(|e| invalid("constants", e.to_string()))?;

        let e = |k: &str| req_f64(&root, &format!("estimates.{k}"));
        let o = |k: &str, d: f64| Ok::<f64, ConfigError>(opt_f64(&root, &format!("estimates.{k}"))?.unwrap_or(d));
        let estimates = EstimateConstants {
            opening: positive("estimates.opening", e("opening")?)?,
            alpha1: unit_open("estimates.alpha1", e("alpha1")?)?,
            m1: positive("estimates.m1", e("m1")?)?,
            delta1: unit_open("estimates.delta1", e("delta1")?)?,
            m: e("m")?,
            delta: unit_open("estimates.delta", e("delta")?)?,
            eps_decay: e("eps_decay")?,
            eps3: positive("estimates.eps3", e("eps3")?)?,
            eps4: positive("estimates.eps4", e("eps4")?)?,
            eps5: positive("estimates.eps5", e("eps5")?)?,
            h0: positive("estimates.h0", e("h0")?)?,
            tau: o("tau", 1.0 / 16.0)?,
            theta0: positive("estimates.theta0", o("theta0", 4.0)?)?,
            k_hat: positive("estimates.k_hat", o("k_hat", 4.0)?)?,
            alpha_star: positive("estimates.alpha_star", o("alpha_star", 1.0)?)?,
            doubling_eps: positive("estimates.doubling_eps", o("doubling_eps", 0.25)?)?,
        };
        if estimates.m <= 1.0 {
            return Err(invalid("estimates.m", format!("must exceed 1, got {}", estimates.m)));
        }
        if !(estimates.tau > 0.0 && estimates.tau < 0.125) {
            return Err(invalid("estimates.tau", format!("must lie in (0, 1/8), got {}", estimates.tau)));
        }
        if estimates.eps_decay < 0.0 {
            return Err(invalid("estimates.eps_decay", "must be nonnegative"));
        }

        let kind: ExperimentKind = req_str(&root, "experiment.name")?.parse()?;
        let solutions = match lookup(&root, "experiment.solutions") {
            None => SolutionFamily::BumpSum,
            Some(_) => req_str(&root, "experiment.solutions")?.parse()?,
        };
        let seed = match lookup(&root, "experiment.seed") {
            None => return Err(ConfigError::Missing("experiment.seed".into())),
            Some(Value::Integer(i)) if *i >= 0 => *i as u64,
            Some(v) => return Err(invalid("experiment.seed", format!("expected a nonnegative integer, got {v}"))),
        };
        let count = |k: &str, d: usize| -> Result<usize, ConfigError> {
            let path = format!("experiment.{k}");
            let c = opt_usize(&root, &path)?.unwrap_or(d);
            if c == 0 {
                return Err(invalid(&path, "must be at least 1"));
            }
            Ok(c)
        };
        let experiment = ExperimentSpec {
            kind,
            solutions,
            samples: count("samples", 30)?,
            calibration_samples: count("calibration_samples", 25)?,
            test_samples: count("test_samples", 50)?,
            height: positive("experiment.height", opt_f64(&root, "experiment.height")?.unwrap_or(0.5))?,
            seed,
        };
        let output_dir = PathBuf::from(req_str(&root, "output.dir")?);
        Ok(ExperimentConfig { potential, grid, constants, estimates, experiment, output_dir })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn apply(mut self, o: &Overrides) -> Result<Self, ConfigError> {
        if let Some(s) = o.seed {
            self.experiment.seed = s;
        }
        if let Some(n) = o.grid {
            if n < 16 {
                return Err(invalid("grid.nodes", format!("need at least 16 nodes per axis, got {n}")));
            }
            self.grid.nodes = n;
        }
        if let Some(dir) = &o.out {
            self.output_dir = dir.clone();
        }
        if let Some(k) = o.experiment {
            self.experiment.kind = k;
        }
        Ok(self)
    }
}

#[cfg(test)]
pub(crate) const MINIMAL: &str = include_str!("../../../../configs/minimal.toml");

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses() {
        let c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.grid.nodes, 64);
        assert_eq!(c.experiment.kind, ExperimentKind::All);
        assert_eq!(c.estimates.tau, 1.0 / 16.0);
        assert_eq!(c.estimates.covering_k(), 32.0);
        assert_eq!(c.experiment.solutions, SolutionFamily::BumpSum);
    }

    #[test]
    fn missing_grid_resolution_is_named() {
        let text = MINIMAL.replace("nodes = 64\n", "");
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap_err(), ConfigError::Missing("grid.nodes".into()));
        let text = MINIMAL.replace("h0 = 0.1\n", "");
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap_err(), ConfigError::Missing("estimates.h0".into()));
    }

    #[test]
    fn invalid_fields_rejected() {
        let text = MINIMAL.replace("family = \"quadratic\"", "family = \"cubic\"");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(ConfigError::Invalid { field, .. }) if field == "potential.family"));
        let text = MINIMAL.replace("alpha1 = 0.05", "alpha1 = 1.5");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(ConfigError::Invalid { field, .. }) if field == "estimates.alpha1"));
        let text = MINIMAL.replace("big_lambda = 1.0", "big_lambda = 0.5");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(ConfigError::Invalid { field, .. }) if field == "constants"));
        assert!(matches!(ExperimentConfig::from_toml_str("not = [valid"), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn overrides_apply() {
        let c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let o = Overrides { seed: Some(3), grid: Some(32), out: Some("elsewhere".into()), experiment: None };
        let c = c.apply(&o).unwrap();
        assert_eq!((c.experiment.seed, c.grid.nodes), (3, 32));
        assert_eq!(c.output_dir, PathBuf::from("elsewhere"));
        assert!(c.apply(&Overrides { grid: Some(4), ..Default::default() }).is_err());
    }

    #[test]
    fn potential_params_read() {
        let text = MINIMAL.replace("family = \"quadratic\"", "family = \"eccentric\"\nparams = { s = 16.0 }");
        let c = ExperimentConfig::from_toml_str(&text).unwrap();
        let f = c.potential.function();
        let h = f.hessian(&[0.0, 0.0]);
        assert!((h[(0, 0)] - 1.0 / 16.0).abs() < 1e-12 && (h[(1, 1)] - 16.0).abs() < 1e-12);
    }
}
