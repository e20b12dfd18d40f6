//! Estimate experiments: critical density, power decay of superlevel sets,
//! the single-section Harnack quotient and its chained form over large
//! sections.

use std::collections::VecDeque;
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::covering::vitali_finite;
use crate::error::HarnessError;
use crate::fit::{power_fit, PowerFit};
use crate::geometry::families::RadialProfile;
use crate::geometry::{lp_norm, CellSet, Grid, Potential, SmoothFunction};
use crate::normalization::{CoefficientModel, ProblemInstance};
use crate::sections::{section, section_with_tilt, SectionSet};

use super::config::{invalid, EstimateConstants, DIM};
use super::experiments::Setup;
use super::report::{Report, Table};
use super::solutions::{generate_solutions, Composed, Profile};

const ORIGIN: [f64; DIM] = [0.0; DIM];

/// Values of a sample and its right-hand side on a set of cells, `NaN`
/// elsewhere.
#[derive(Clone, Debug)]
pub struct CellValues {
    pub v: Vec<f64>,
    pub f: Vec<f64>,
}

impl CellValues {
    /// Evaluates `v` and `f = a^{ij} v_ij + b·Dv + c v` from the closed-form
    /// derivatives of `function` on `cells`.
    pub fn evaluate(p: &ProblemInstance, function: &dyn SmoothFunction, cells: &CellSet) -> Self {
        let grid = p.grid();
        let vals: Vec<(usize, f64, f64)> = cells
            .indices()
            .par_iter()
            .map(|&c| {
                let x = grid.point(c);
                let v = function.value(&x);
                let f = ((p.a)(&x).component_mul(&function.hessian(&x))).sum()
                    + (p.b)(&x).dot(&function.gradient(&x))
                    + (p.c)(&x) * v;
                (c, v, f)
            })
            .collect();
        let mut out = CellValues { v: vec![f64::NAN; grid.len()], f: vec![f64::NAN; grid.len()] };
        for (c, v, f) in vals {
            out.v[c] = v;
            out.f[c] = f;
        }
        out
    }
}

/// `‖b‖_{L^q(S)} + ‖c⁻‖_{L^n(S)} + ‖f⁺‖_{L^n(S)}` with `q` the drift exponent.
fn lower_budget(p: &ProblemInstance, f: &[f64], q: f64) -> f64 {
    let grid = p.grid();
    let cells = &p.section.cells;
    let n = DIM as f64;
    lp_norm(grid, cells, q, |c| (p.b)(&grid.point(c)).norm())
        + lp_norm(grid, cells, n, |c| (-(p.c)(&grid.point(c))).max(0.0))
        + lp_norm(grid, cells, n, |c| f[c].max(0.0))
}

fn min_max_on(values: &[f64], cells: &CellSet) -> (f64, f64) {
    cells.iter().map(|c| values[c]).fold((f64::INFINITY, f64::NEG_INFINITY), |a, v| (a.0.min(v), a.1.max(v)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityOutcome {
    /// `|{v > M^{k+1}} ∩ S(t0)| / |S(t0)|`.
    pub fraction: f64,
    pub applicable: bool,
    pub min_v: f64,
    pub threshold: f64,
    pub holds: bool,
}

/// One critical-density instance on the instance section `S(x0, 4 t0)`: if
/// `{v > M^{k+1}}` fills more than `1 - δ` of `S(t0)`, then `v > M^k` on
/// `S(t0)`.
pub fn critical_density_run(
    p: &ProblemInstance,
    values: &CellValues,
    k: u32,
    est: &EstimateConstants,
) -> Result<DensityOutcome, HarnessError> {
    let budget = lower_budget(p, &values.f, DIM as f64);
    if budget > est.eps3 {
        return Err(HarnessError::NormBudgetExceeded(format!("lower-order budget {budget:.4e} exceeds eps3 = {}", est.eps3)));
    }
    let s1 = section_with_tilt(&p.potential, p.section.tilt.clone(), p.section.height / 4.0)?;
    if s1.cells.is_empty() {
        return Err(HarnessError::HypothesisViolation("S(t0) has no grid nodes".into()));
    }
    let high = est.m.powi(k as i32 + 1);
    let above = s1.cells.iter().filter(|&c| values.v[c] > high).count();
    let fraction = above as f64 / s1.cells.len() as f64;
    let applicable = fraction > 1.0 - est.delta;
    let threshold = est.m.powi(k as i32);
    let (min_v, _) = min_max_on(&values.v, &s1.cells);
    Ok(DensityOutcome { fraction, applicable, min_v, threshold, holds: min_v > threshold })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayRow {
    pub t: f64,
    pub fraction: f64,
    pub cells: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecayRun {
    pub rows: Vec<DecayRow>,
    pub budget: f64,
}

impl DecayRun {
    pub fn monotone(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].fraction <= w[0].fraction)
    }

    /// Power fit of the tail `t >= 2` over rows accepted by `resolved`.
    pub fn tail_fit(&self, resolved: impl Fn(&DecayRow) -> bool) -> Option<PowerFit> {
        let (ts, fs): (Vec<f64>, Vec<f64>) =
            self.rows.iter().filter(|r| r.t >= 2.0 && r.fraction > 0.0 && resolved(r)).map(|r| (r.t, r.fraction)).unzip();
        power_fit(&ts, &fs, 3).ok()
    }
}

/// `|{v > t} ∩ S(t0)| / |S(t0)|` for dyadic `t` on the instance section
/// `S(x0, K̂ t0)`, after checking `inf_{S(t0)} v <= 1` and the budget with
/// the drift in `L^p`.
pub fn power_decay_run(p: &ProblemInstance, values: &CellValues, est: &EstimateConstants) -> Result<DecayRun, HarnessError> {
    let s1 = section_with_tilt(&p.potential, p.section.tilt.clone(), p.section.height / est.k_hat)?;
    if s1.cells.is_empty() {
        return Err(HarnessError::HypothesisViolation("S(t0) has no grid nodes".into()));
    }
    let (inf, _) = min_max_on(&values.v, &s1.cells);
    if !(inf <= 1.0) {
        return Err(HarnessError::HypothesisViolation(format!("inf over S(t0) is {inf}, above 1")));
    }
    let budget = lower_budget(p, &values.f, p.constants.p);
    if budget > est.eps4 {
        return Err(HarnessError::NormBudgetExceeded(format!("lower-order budget {budget:.4e} exceeds eps4 = {}", est.eps4)));
    }
    let total = s1.cells.len() as f64;
    let mut rows = Vec::new();
    for j in -2..=60 {
        let t = 2f64.powi(j);
        let cells = s1.cells.iter().filter(|&c| values.v[c] > t).count();
        rows.push(DecayRow { t, fraction: cells as f64 / total, cells });
        if cells == 0 {
            break;
        }
    }
    Ok(DecayRun { rows, budget })
}

/// Rows with at least this many cells on the coarsest grid enter fits and
/// dominance checks.
pub const RESOLVED_CELLS: usize = 30;

/// Refinement factors of the decay grids over the configured resolution.
pub const DECAY_FACTORS: [usize; 3] = [4, 8, 16];

/// Smoothed `κ / (δ0 + ρ)` about a point near the origin, with `κ` chosen so
/// that `inf_{S(t0)} v` sits just below 1.
#[derive(Clone, Debug)]
struct DecaySample {
    center: Vec<f64>,
    delta0: f64,
}

impl DecaySample {
    fn draw(rng: &mut ChaCha8Rng, radius: f64) -> Self {
        let center = (0..DIM).map(|_| rng.random_range(-0.1..0.1) * radius).collect();
        DecaySample { center, delta0: rng.random_range(0.005..0.05) }
    }

    fn function(&self, grid: &Grid, s1: &SectionSet) -> RadialProfile {
        let eta = self.delta0 / 2.0;
        let rho_max = s1
            .cells
            .iter()
            .map(|c| {
                let x = grid.point(c);
                let d2: f64 = x.iter().zip(&self.center).map(|(a, b)| (a - b).powi(2)).sum();
                (d2 + eta * eta).sqrt()
            })
            .fold(0.0, f64::max);
        let kappa = (self.delta0 + rho_max) * (1.0 - 1e-12);
        RadialProfile::truncated_inverse(DVector::from_column_slice(&self.center), kappa, self.delta0, eta)
    }

    fn run(&self, dg: &DecayGrid, est: &EstimateConstants) -> Result<DecayRun, HarnessError> {
        let model = CoefficientModel::RadialPucci { center: self.center.clone(), eta: self.delta0 / 2.0 };
        let p = ProblemInstance::new(dg.u.clone(), dg.outer.clone(), dg.constants, &model);
        let g = self.function(dg.u.grid(), &dg.s1);
        let values = CellValues::evaluate(&p, &g, &dg.outer.cells);
        power_decay_run(&p, &values, est)
    }
}

/// A grid sized to the decay sections, refined by `factor`.
struct DecayGrid {
    u: Arc<Potential>,
    outer: SectionSet,
    s1: SectionSet,
    constants: crate::geometry::StructuralConstants,
}

impl DecayGrid {
    fn new(s: &Setup, factor: usize) -> Result<Self, HarnessError> {
        let base = s.u.grid();
        let radius = s.section.max_radius(base);
        let half_width = 1.1 * radius + 2.0 * base.max_spacing();
        let nodes = (s.config.grid.nodes - 1) * factor + 1;
        let grid = Grid::centered(DIM, half_width, nodes)?;
        let f = s.config.potential.function();
        let u = Arc::new(Potential::analytic(grid, f)?);
        let outer = section(&u, &ORIGIN, s.height())?;
        outer.require_contained()?;
        let s1 = section_with_tilt(&u, outer.tilt.clone(), s.height() / s.config.estimates.k_hat)?;
        Ok(DecayGrid { u, outer, s1, constants: s.config.constants })
    }
}

fn density_samples(s: &Setup, p: &ProblemInstance, count: usize) -> Result<Vec<(f64, CellValues)>, HarnessError> {
    let uf = s.u.analytic_fn().cloned().ok_or_else(|| HarnessError::HypothesisViolation("needs an analytic potential".into()))?;
    let h = p.section.height;
    let est = &s.config.estimates;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed(5));
    let top = est.m.powi(5).ln();
    (0..count)
        .map(|_| {
            let kappa = rng.random_range(0.0..top).exp();
            let r1 = rng.random_range(0.0..0.6);
            let r2 = rng.random_range(0.0..0.3);
            let g = Profile::Quadratic([kappa, -kappa * r1 / h, -kappa * r2 / (h * h)]);
            let c = Composed { u: uf.clone(), tilt: p.section.tilt.clone(), g };
            Ok((kappa, CellValues::evaluate(p, &c, &p.section.closure())))
        })
        .collect()
}

pub fn decay_experiment(s: &Setup) -> Result<Report, HarnessError> {
    let mut r = Report::new("decay");
    let est = &s.config.estimates;
    if !s.pinching(&mut r, &s.section) {
        r.not_applicable("determinant pinching fails on S(0, h)");
        return Ok(r.finish());
    }

    // Critical density over S(0, h) = S(4 t0).
    let p = s.instance(s.section.clone(), &s.cofactor_model());
    let mut t = Table::new("density", &["sample", "kappa", "k", "fraction", "applicable", "min_v", "threshold"]);
    let (mut applicable, mut failures) = (0, 0);
    for (i, (kappa, vals)) in density_samples(s, &p, s.config.experiment.samples)?.iter().enumerate() {
        for k in 0..=5 {
            let o = critical_density_run(&p, vals, k, est)?;
            t.push(vec![i as f64, *kappa, k as f64, o.fraction, o.applicable as u8 as f64, o.min_v, o.threshold]);
            if o.applicable {
                applicable += 1;
                failures += (!o.holds) as usize;
            }
        }
    }
    r.table(t);
    r.constant("M", est.m, "config estimates.m");
    r.constant("delta", est.delta, "config estimates.delta");
    r.check_ge("density instances applicable", applicable as f64, 1.0);
    r.check_le("density failures", failures as f64, 0.0);

    // Power decay on a grid fitted to the sections.
    let coarse = DecayGrid::new(s, DECAY_FACTORS[0])?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed(6));
    let radius = coarse.s1.max_radius(coarse.u.grid());
    let calib: Vec<DecaySample> =
        (0..s.config.experiment.calibration_samples).map(|_| DecaySample::draw(&mut rng, radius)).collect();
    let test: Vec<DecaySample> = (0..s.config.experiment.test_samples).map(|_| DecaySample::draw(&mut rng, radius)).collect();
    let resolved = |row: &DecayRow| row.cells >= RESOLVED_CELLS;

    let calib_runs = calib.iter().map(|d| d.run(&coarse, est)).collect::<Result<Vec<_>, _>>()?;
    let fits: Vec<f64> = calib_runs.iter().filter_map(|run| run.tail_fit(resolved)).map(|f| -f.slope).collect();
    if fits.is_empty() {
        r.not_applicable("no calibration sample resolves three tail rows");
        return Ok(r.finish());
    }
    let eps_hat = fits.iter().cloned().fold(f64::INFINITY, f64::min);
    let c1 = 1.25
        * calib_runs
            .iter()
            .flat_map(|run| run.rows.iter().filter(|row| resolved(row)).map(|row| row.fraction * row.t.powf(eps_hat)))
            .fold(0.0, f64::max);
    r.constant("eps_hat", eps_hat, format!("smallest fitted tail exponent over {} calibration samples", fits.len()));
    r.constant("C1", c1, "1.25 times the calibration maximum of F(t) t^eps_hat");
    r.check_ge("decay exponent", eps_hat, est.eps_decay);

    let mut curve = Table::new("decay", &["sample", "t", "fraction", "cells", "bound"]);
    let (mut violations, mut monotone_fail, mut max_budget) = (0, 0, 0.0f64);
    for (i, d) in test.iter().enumerate() {
        let run = d.run(&coarse, est)?;
        max_budget = max_budget.max(run.budget);
        monotone_fail += (!run.monotone()) as usize;
        for row in &run.rows {
            let bound = c1 * row.t.powf(-eps_hat);
            curve.push(vec![i as f64, row.t, row.fraction, row.cells as f64, bound]);
            if resolved(row) && row.fraction > bound {
                violations += 1;
            }
        }
    }
    r.budget("lower-order budget", max_budget, est.eps4);
    r.check_le("non-monotone decay tables", monotone_fail as f64, 0.0);
    r.check_le("decay bound violations", violations as f64, 0.0);
    r.table(curve);

    // Grid refinement of a sharp reference sample, fitted on the rows
    // resolved on the coarsest grid.
    let reference = DecaySample { center: vec![0.0; DIM], delta0: 0.005 };
    let reference_run = reference.run(&coarse, est)?;
    let base_rows: Vec<f64> = reference_run.rows.iter().filter(|row| resolved(row)).map(|row| row.t).collect();
    let mut refine = Vec::new();
    for factor in DECAY_FACTORS {
        let dg = if factor == DECAY_FACTORS[0] { None } else { Some(DecayGrid::new(s, factor)?) };
        let run = match &dg {
            None => reference_run.clone(),
            Some(g) => reference.run(g, est)?,
        };
        if let Some(fit) = run.tail_fit(|row| base_rows.contains(&row.t)) {
            refine.push((factor as f64, -fit.slope));
        }
    }
    if refine.len() == 3 {
        let lo = refine.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let hi = refine.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        r.check_le("exponent spread under refinement", hi / lo - 1.0, 0.1);
    } else {
        r.note("reference sample resolves fewer than three tail rows; refinement not checked");
    }
    r.plot("exponent_refinement", refine);
    Ok(r.finish())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HarnackOutcome {
    pub h: f64,
    pub h0_effective: f64,
    pub sup: f64,
    pub inf: f64,
    /// `h^{1/2} ‖f‖_{L^n(S(x0, h))}`.
    pub forcing: f64,
    pub quotient: f64,
}

/// Largest admissible `h0`: the configured value, lowered until
/// `h0^{α*/(1+α*) - n/(2p)} ‖b‖_{L^p} <= ε5` and `h0^{1/2} ‖c‖_{L^n} <= ε5`.
pub fn effective_h0(p: &ProblemInstance, est: &EstimateConstants) -> Result<f64, HarnessError> {
    let grid = p.grid();
    let cells = &p.section.cells;
    let n = DIM as f64;
    let q = p.constants.p;
    let e = est.alpha_star / (1.0 + est.alpha_star) - n / (2.0 * q);
    if !(e > 0.0) {
        return Err(HarnessError::HypothesisViolation(format!(
            "drift exponent p = {q} is too small for alpha* = {}",
            est.alpha_star
        )));
    }
    let b = lp_norm(grid, cells, q, |c| (p.b)(&grid.point(c)).norm());
    let c = lp_norm(grid, cells, n, |c| (p.c)(&grid.point(c)));
    let mut h0 = est.h0;
    if b > 0.0 {
        h0 = h0.min((est.eps5 / b).powf(1.0 / e));
    }
    if c > 0.0 {
        h0 = h0.min((est.eps5 / c).powi(2));
    }
    Ok(h0)
}

/// `sup / (inf + h^{1/2} ‖f‖_{L^n(S)})` over `S(x0, h/8)` for the instance
/// section `S = S(x0, h)`.
pub fn harnack_quotient_run(p: &ProblemInstance, values: &CellValues, est: &EstimateConstants) -> Result<HarnackOutcome, HarnessError> {
    let h = p.section.height;
    let h0 = effective_h0(p, est)?;
    if h > h0 {
        return Err(HarnessError::HeightBudgetExceeded { h, h0 });
    }
    let inner = section_with_tilt(&p.potential, p.section.tilt.clone(), h / 8.0)?;
    if inner.cells.is_empty() {
        return Err(HarnessError::HypothesisViolation("S(h/8) has no grid nodes".into()));
    }
    let (inf, sup) = min_max_on(&values.v, &inner.cells);
    if !(inf > 0.0) {
        return Err(HarnessError::HypothesisViolation(format!("v is not positive on S(h/8): inf = {inf}")));
    }
    let forcing = h.sqrt() * lp_norm(p.grid(), &p.section.cells, DIM as f64, |c| values.f[c]);
    Ok(HarnackOutcome { h, h0_effective: h0, sup, inf, forcing, quotient: sup / (inf + forcing) })
}

/// Number of chained sections `max{1, (h/h0)^{n/2}}`.
pub fn chain_count(h: f64, h0: f64) -> f64 {
    (h / h0).powf(DIM as f64 / 2.0).max(1.0)
}

/// `C^{N(h, h0)}`.
pub fn chained_bound(c: f64, h: f64, h0: f64) -> f64 {
    c.powf(chain_count(h, h0))
}

/// Finite cover of `closure S(x0, h)` by `S(x_i, τ min(h, h0))` and the
/// breadth-first depth of each cover section from the one holding the
/// minimum.
struct ChainGeometry {
    h: f64,
    domain: CellSet,
    sections: Vec<SectionSet>,
    /// Section closures; neighbors share a closure cell.
    closures: Vec<CellSet>,
    adjacency: Vec<Vec<usize>>,
}

impl ChainGeometry {
    fn new(s: &Setup, h: f64, h0: f64) -> Result<Self, HarnessError> {
        let est = &s.config.estimates;
        let domain = s.centered(h)?.closure();
        let cover = vitali_finite(&s.u, &domain, |_| est.tau * h.min(h0), est.covering_k())?;
        let closures: Vec<CellSet> = cover.sections.iter().map(|sec| sec.closure()).collect();
        let m = closures.len();
        let adjacency =
            (0..m).map(|i| (0..m).filter(|&j| j != i && closures[i].intersects(&closures[j])).collect()).collect();
        Ok(ChainGeometry { h, domain, sections: cover.sections, closures, adjacency })
    }

    fn depths(&self, start: usize) -> Vec<usize> {
        let mut depth = vec![usize::MAX; self.sections.len()];
        let mut queue = VecDeque::from([start]);
        depth[start] = 0;
        while let Some(i) = queue.pop_front() {
            for &j in &self.adjacency[i] {
                if depth[j] == usize::MAX {
                    depth[j] = depth[i] + 1;
                    queue.push_back(j);
                }
            }
        }
        depth
    }

    /// Checks `sup v <= b_d` over the closures along the chain, where `b_0` is the sup
    /// over the section holding the minimum and `b_d = C (b_{d-1} + F)` with
    /// `C` the largest local quotient. Returns the chain depth, or `None` when
    /// the bookkeeping fails or the overlap graph is disconnected.
    fn bookkeeping(&self, v: &[f64], forcing: f64) -> Option<usize> {
        let stats: Vec<(f64, f64)> = self.closures.iter().map(|cl| min_max_on(v, cl)).collect();
        let c_local = stats.iter().map(|(lo, hi)| hi / (lo + forcing)).fold(1.0, f64::max);
        let (argmin, _) = self.domain.iter().map(|c| (c, v[c])).fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        let start = self.closures.iter().position(|cl| cl.contains(argmin))?;
        let depth = self.depths(start);
        let max_depth = *depth.iter().max()?;
        if max_depth == usize::MAX {
            return None;
        }
        let mut b = stats[start].1;
        for d in 1..=max_depth {
            b = c_local * (b + forcing);
            let worst = depth.iter().zip(&stats).filter(|(dd, _)| **dd == d).map(|(_, s)| s.1).fold(0.0, f64::max);
            if worst > b * (1.0 + 1e-12) {
                return None;
            }
        }
        Some(max_depth)
    }
}

pub fn harnack_experiment(s: &Setup) -> Result<Report, HarnessError> {
    let mut r = Report::new("harnack");
    let est = &s.config.estimates;
    let k = &s.config.constants;
    if !r.hypothesis(
        "drift exponent",
        k.harnack_admissible(DIM, est.alpha_star),
        format!("p = {} against n(1 + a*)/(2 a*) = {}", k.p, DIM as f64 * (1.0 + est.alpha_star) / (2.0 * est.alpha_star)),
    ) {
        r.not_applicable("drift exponent below the admissible range");
        return Ok(r.finish());
    }
    let h0 = est.h0;
    let s_h0 = s.centered(h0)?;
    if !s.pinching(&mut r, &s.centered(8.0 * h0)?) {
        r.not_applicable("determinant pinching fails on S(0, 8 h0)");
        return Ok(r.finish());
    }
    let drift: Arc<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync> = Arc::new(|_| DVector::from_vec(vec![0.1, 0.0]));
    let zero: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync> = Arc::new(|_| -0.1);
    let with_terms = |sec: SectionSet| s.instance(sec, &s.cofactor_model()).with_drift(drift.clone()).with_zero_order(zero.clone());
    let p = with_terms(s_h0.clone());
    let h0_eff = effective_h0(&p, est)?;
    r.constant("h0", h0_eff, "configured h0 lowered by the drift and zero-order budgets");
    let family = s.config.experiment.solutions;
    let ncal = s.config.experiment.calibration_samples;
    let ntest = s.config.experiment.test_samples;

    // Single section at h = h0.
    let batch = generate_solutions(&p, family, ncal + ntest, s.seed(7))?;
    let outcomes = batch
        .iter()
        .map(|smp| {
            let vals = CellValues { v: smp.v.values().to_vec(), f: smp.f.clone() };
            harnack_quotient_run(&p, &vals, est)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let c = 2.0 * outcomes[..ncal].iter().map(|o| o.quotient).fold(0.0, f64::max);
    r.constant("C", c, format!("twice the largest quotient over {ncal} calibration samples"));
    let mut t = Table::new("quotients", &["sample", "calibration", "sup", "inf", "forcing", "quotient"]);
    for (i, o) in outcomes.iter().enumerate() {
        t.push(vec![i as f64, (i < ncal) as u8 as f64, o.sup, o.inf, o.forcing, o.quotient]);
    }
    r.table(t);
    let worst = outcomes[ncal..].iter().map(|o| o.quotient).fold(0.0, f64::max);
    r.check_le("largest test quotient", worst, c);

    // Chained over S(0, h) for h = h0, 2h0, 4h0; samples live on S(0, 8h0).
    let wide = s.centered(8.0 * h0)?;
    if !wide.compactly_contained {
        return Err(invalid("estimates.h0", "S(0, 8 h0) is not compactly contained in the grid").into());
    }
    let pw = with_terms(wide.clone());
    let batch = generate_solutions(&pw, family, ncal + ntest, s.seed(8))?;
    let heights = [h0, 2.0 * h0, 4.0 * h0];
    let chains = heights.iter().map(|&h| ChainGeometry::new(s, h, h0)).collect::<Result<Vec<_>, _>>()?;
    let doubled: Vec<CellSet> = heights.iter().map(|&h| s.centered(2.0 * h).map(|x| x.cells)).collect::<Result<_, _>>()?;
    let grid = s.u.grid();
    let chained_quotient = |j: usize, v: &[f64], f: &[f64]| -> (f64, f64) {
        let g = &chains[j];
        let forcing = g.h.sqrt() * lp_norm(grid, &doubled[j], DIM as f64, |c| f[c]);
        let (lo, hi) = min_max_on(v, &g.domain);
        (hi / (lo + forcing), forcing)
    };
    let c_chain = 2.0
        * batch[..ncal].iter().map(|smp| chained_quotient(0, smp.v.values(), &smp.f).0).fold(0.0, f64::max);
    r.constant("C chain", c_chain, format!("twice the largest quotient over D = closure S(0, h0), {ncal} samples"));
    r.check_true("chained bound at h0 equals the single bound", chained_bound(c_chain, h0, h0) == c_chain);

    let mut ct = Table::new("chain", &["h", "sections", "chain_count", "ratio", "depth", "bound", "worst_quotient"]);
    let mut ratios = Vec::new();
    let (mut violations, mut bookkeeping_fail) = (0, 0);
    for (j, g) in chains.iter().enumerate() {
        let nn = chain_count(g.h, h0);
        let bound = chained_bound(c_chain, g.h, h0);
        let mut worst = 0.0f64;
        let mut depth = 0;
        for smp in &batch[ncal..] {
            let (q, forcing) = chained_quotient(j, smp.v.values(), &smp.f);
            worst = worst.max(q);
            violations += (q > bound) as usize;
            match g.bookkeeping(smp.v.values(), forcing) {
                Some(d) => depth = depth.max(d),
                None => bookkeeping_fail += 1,
            }
        }
        let ratio = g.sections.len() as f64 / (g.h / h0).powf(DIM as f64 / 2.0);
        ratios.push(ratio);
        ct.push(vec![g.h, g.sections.len() as f64, nn, ratio, depth as f64, bound, worst]);
    }
    r.table(ct);
    let spread = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    r.check_le("cover count spread", spread, 2.0);
    r.check_le("chained bound violations", violations as f64, 0.0);
    r.check_le("chain bookkeeping failures", bookkeeping_fail as f64, 0.0);
    Ok(r.finish())
}
