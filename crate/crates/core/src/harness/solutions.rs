//! Forward-constructed solutions: pick a nonnegative `v`, derive
//! `f = a^{ij} v_ij + b·Dv + c v` at every node.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, GeometryError, HarnessError};
use crate::geometry::families::{AffineFunction, RadialProfile, SumFunction};
use crate::geometry::field::NodeField;
use crate::geometry::{GaussianBump, Pullback, QuadraticForm, SharedFunction, SmoothFunction};
use crate::normalization::{john_normalize, ProblemInstance};
use crate::sections::Tilt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolutionFamily {
    /// `κ + ℓ·y + β q(y)` with `q` a rotated `y₁² - y₂²`.
    HarmonicType,
    /// `c₀ + κ / (δ₀ + ρ)`.
    Radial,
    /// `c₀ + Σ a_k exp(-|y - c_k|² / (2σ_k²))`.
    BumpSum,
    /// `g(u - ℓ)` for a quadratic `g`.
    PotentialComposed,
}

impl SolutionFamily {
    pub const ALL: [SolutionFamily; 4] = [
        SolutionFamily::HarmonicType,
        SolutionFamily::Radial,
        SolutionFamily::BumpSum,
        SolutionFamily::PotentialComposed,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SolutionFamily::HarmonicType => "harmonic-type",
            SolutionFamily::Radial => "radial",
            SolutionFamily::BumpSum => "bump-sum",
            SolutionFamily::PotentialComposed => "potential-composed",
        }
    }
}

impl fmt::Display for SolutionFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolutionFamily {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        SolutionFamily::ALL.iter().find(|f| f.name() == s).copied().ok_or_else(|| ConfigError::Invalid {
            field: "experiment.solutions".into(),
            reason: format!("unknown solution family `{s}`"),
        })
    }
}

/// Profiles `g` for [`Composed`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Profile {
    /// `g0 + g1 s + g2 s²`.
    Quadratic([f64; 3]),
    /// `A e^{-γ s}`.
    Exponential { amplitude: f64, rate: f64 },
}

impl Profile {
    /// `(g, g', g'')` at `s`.
    pub fn derivs(&self, s: f64) -> (f64, f64, f64) {
        match *self {
            Profile::Quadratic([a, b, c]) => (a + b * s + c * s * s, b + 2.0 * c * s, 2.0 * c),
            Profile::Exponential { amplitude, rate } => {
                let e = amplitude * (-rate * s).exp();
                (e, -rate * e, rate * rate * e)
            }
        }
    }
}

/// `g(u(x) - ℓ(x))` with `ℓ` the tangent plane of `u` at the tilt center.
#[derive(Clone, Debug)]
pub struct Composed {
    pub u: SharedFunction,
    pub tilt: Tilt,
    pub g: Profile,
}

impl Composed {
    fn s(&self, x: &[f64]) -> f64 {
        self.tilt.bracket_with(self.u.value(x), x)
    }

    fn ds(&self, x: &[f64]) -> DVector<f64> {
        self.u.gradient(x) - DVector::from_column_slice(&self.tilt.slope)
    }

    fn g_derivs(&self, s: f64) -> (f64, f64, f64) {
        self.g.derivs(s)
    }

    /// `tr((D²u)⁻¹ D²v) = g'(s) n + g''(s) u^{ij} s_i s_j`.
    pub fn normalized_trace(&self, x: &[f64]) -> f64 {
        let (_, g1, g2) = self.g_derivs(self.s(x));
        let n = self.u.dim() as f64;
        let ds = self.ds(x);
        let hinv = self.u.hessian(x).try_inverse().expect("strictly convex potential");
        g1 * n + g2 * ds.dot(&(hinv * &ds))
    }
}

impl SmoothFunction for Composed {
    fn dim(&self) -> usize {
        self.u.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.g_derivs(self.s(x)).0
    }

    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        self.ds(x) * self.g_derivs(self.s(x)).1
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let (_, g1, g2) = self.g_derivs(self.s(x));
        let ds = self.ds(x);
        &ds * ds.transpose() * g2 + self.u.hessian(x) * g1
    }

    fn name(&self) -> String {
        match self.g {
            Profile::Quadratic([a, b, c]) => format!("composed({a} + {b} s + {c} s^2)"),
            Profile::Exponential { amplitude, rate } => format!("composed({amplitude} exp(-{rate} s))"),
        }
    }
}

/// A nonnegative `v` and the right-hand side it solves exactly.
#[derive(Clone, Debug)]
pub struct SolutionSample {
    pub family: SolutionFamily,
    pub label: String,
    pub function: SharedFunction,
    pub v: NodeField,
    /// `a^{ij} v_ij + b·Dv + c v` at every grid node.
    pub f: Vec<f64>,
}

impl SolutionSample {
    pub fn new(p: &ProblemInstance, function: SharedFunction, family: SolutionFamily) -> Result<Self, GeometryError> {
        let grid = p.grid();
        let v = NodeField::from_function(grid, function.clone())?;
        let f = derived_rhs(p, &v);
        Ok(SolutionSample { family, label: function.name(), function, v, f })
    }

    pub fn f_at(&self, x: &[f64]) -> f64 {
        self.v.grid().interpolate_scalar(&self.f, x)
    }
}

/// `a^{ij} v_ij + b·Dv + c v` at every node of `v`'s grid.
pub fn derived_rhs(p: &ProblemInstance, v: &NodeField) -> Vec<f64> {
    let grid = v.grid();
    (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = grid.point(i);
            let a = (p.a)(&x);
            (a.component_mul(&v.hessian(i))).sum() + (p.b)(&x).dot(&v.gradient(i)) + (p.c)(&x) * v.value(i)
        })
        .collect()
}

fn rotation(theta: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, r: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-r..r))
}

// Profiles below are functions of normalized coordinates `y ∈ B_2` and are
// positive there.

fn harmonic_profile(n: usize, rng: &mut ChaCha8Rng) -> SharedFunction {
    let slope = random_vec(rng, n, 0.5);
    let beta = rng.random_range(-0.3..0.3);
    let r = rotation(rng.random_range(0.0..std::f64::consts::PI));
    let m = &r * DMatrix::from_diagonal(&DVector::from_vec(vec![2.0 * beta, -2.0 * beta])) * r.transpose();
    let kappa = 2.0 * slope.norm() + 4.0 * beta.abs() + rng.random_range(0.2..1.0);
    Arc::new(SumFunction {
        terms: vec![
            Arc::new(AffineFunction { constant: kappa, slope }),
            Arc::new(QuadraticForm::new(m, DVector::zeros(n), "harmonic quadratic")),
        ],
    })
}

fn radial_profile(n: usize, rng: &mut ChaCha8Rng) -> SharedFunction {
    let c0 = rng.random_range(0.0..0.5);
    let kappa = rng.random_range(0.5..2.0);
    let delta0 = rng.random_range(0.05..0.3);
    let center = random_vec(rng, n, 0.5);
    Arc::new(SumFunction {
        terms: vec![
            Arc::new(AffineFunction { constant: c0, slope: DVector::zeros(n) }),
            Arc::new(RadialProfile::truncated_inverse(center, kappa, delta0, 0.05)),
        ],
    })
}

fn bump_profile(n: usize, rng: &mut ChaCha8Rng) -> SharedFunction {
    let mut terms: Vec<SharedFunction> = Vec::new();
    let mut total = 0.0;
    for _ in 0..3 {
        let amplitude: f64 = rng.random_range(-1.0..1.0);
        total += amplitude.abs();
        terms.push(Arc::new(GaussianBump { amplitude, center: random_vec(rng, n, 1.0), sigma: rng.random_range(0.3..0.8) }));
    }
    let c0 = total + rng.random_range(0.1..1.0);
    terms.push(Arc::new(AffineFunction { constant: c0, slope: DVector::zeros(n) }));
    Arc::new(SumFunction { terms })
}

/// `count` samples of `family` placed relative to the instance section: the
/// profiles live on the John-normalized section and are pulled back, so the
/// batch statistics are affine invariant. Deterministic for a fixed seed.
pub fn generate_solutions(
    p: &ProblemInstance,
    family: SolutionFamily,
    count: usize,
    seed: u64,
) -> Result<Vec<SolutionSample>, HarnessError> {
    let u = &p.potential;
    let grid = u.grid();
    let height = p.section.height;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let functions: Vec<SharedFunction> = match family {
        SolutionFamily::PotentialComposed => {
            let uf = u
                .analytic_fn()
                .cloned()
                .ok_or_else(|| HarnessError::HypothesisViolation("composed samples need an analytic potential".into()))?;
            (0..count)
                .map(|_| {
                    let g1 = rng.random_range(-1.0..1.0) / height;
                    let g2 = rng.random_range(-1.0..1.0) / (height * height);
                    // Closure cells sit slightly above the section height.
                    let span = 2.0 * height;
                    let g0 = g1.abs() * span + g2.abs() * span * span + rng.random_range(0.2..1.0);
                    Arc::new(Composed { u: uf.clone(), tilt: p.section.tilt.clone(), g: Profile::Quadratic([g0, g1, g2]) }) as SharedFunction
                })
                .collect()
        }
        _ => {
            let map = john_normalize(grid, &p.section)?;
            let n = u.dim();
            (0..count)
                .map(|_| {
                    let w = match family {
                        SolutionFamily::HarmonicType => harmonic_profile(n, &mut rng),
                        SolutionFamily::Radial => radial_profile(n, &mut rng),
                        _ => bump_profile(n, &mut rng),
                    };
                    Arc::new(Pullback::new(w, map.linear.clone(), map.shift.clone(), 1.0)) as SharedFunction
                })
                .collect()
        }
    };
    functions
        .into_par_iter()
        .map(|f| SolutionSample::new(p, f, family).map_err(HarnessError::from))
        .collect()
}
