//! Geometric experiments: sections, normalization, sliding paraboloids, the
//! measure and doubling constructions, and coverings.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::barriers::{correction_barrier, gradient_smallness, trace_bound};
use crate::covering::{
    calibrate_c2, dense_sampling, grow_ink_spots, ink_spots_step, vitali_select, InkSpotsReport, SectionCollection,
};
use crate::error::{CoveringError, HarnessError};
use crate::geometry::families::unit_ball_volume;
use crate::geometry::{CellSet, NodeField, Potential, QuadraticForm, SharedFunction};
use crate::normalization::{
    det_ah_sweep, john_normalize, normalized_bounds, normalized_grid, rescale_checks, rescale_problem,
    zero_order_round_trip, CoefficientModel, ProblemInstance,
};
use crate::sections::{convexity_defects, estimate_engulfing, section, section_with_tilt, volume_ratio_sweep, SectionSet};
use crate::sliding::{
    measure_contacts, slide_paraboloid, ClaimStatus, DoublingParams, DoublingSetup, MeasureRunConfig, SlideOptions,
};

use super::config::{invalid, ExperimentConfig, PotentialFamily, DIM};
use super::report::{Report, Table};
use super::solutions::{Composed, Profile, SolutionFamily, SolutionSample};

const ORIGIN: [f64; DIM] = [0.0; DIM];

/// Potential and base section `S(0, height)` shared by every experiment.
#[derive(Clone, Debug)]
pub struct Setup {
    pub config: ExperimentConfig,
    pub u: Arc<Potential>,
    pub section: SectionSet,
}

impl Setup {
    pub fn new(config: &ExperimentConfig) -> Result<Self, HarnessError> {
        config.constants.validate(DIM).map_err(|e| invalid("constants", e.to_string()))?;
        let u = Arc::new(config.potential.build(&config.grid)?);
        let h = config.experiment.height;
        let section = section(&u, &ORIGIN, h)?;
        if !section.compactly_contained || section.cells.is_empty() {
            return Err(invalid("experiment.height", format!("S(0, {h}) is not compactly contained in the grid")).into());
        }
        Ok(Setup { config: config.clone(), u, section })
    }

    pub fn height(&self) -> f64 {
        self.config.experiment.height
    }

    /// Independent RNG stream per purpose.
    pub fn seed(&self, stream: u64) -> u64 {
        self.config.experiment.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream)
    }

    /// `S(0, h)` sharing the base tilt.
    pub fn centered(&self, h: f64) -> Result<SectionSet, HarnessError> {
        Ok(section_with_tilt(&self.u, self.section.tilt.clone(), h)?)
    }

    pub fn cofactor_model(&self) -> CoefficientModel {
        CoefficientModel::Cofactor { scale: self.config.constants.lambda_tilde }
    }

    pub fn instance(&self, s: SectionSet, model: &CoefficientModel) -> ProblemInstance {
        ProblemInstance::new(self.u.clone(), s, self.config.constants, model)
    }

    /// Records whether `λ ≤ det D²u ≤ Λ` on the closure of `s`.
    pub fn pinching(&self, r: &mut Report, s: &SectionSet) -> bool {
        let k = &self.config.constants;
        let (lo, hi) = s
            .closure()
            .iter()
            .map(|c| self.u.det_hessian(c))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |a, d| (a.0.min(d), a.1.max(d)));
        let slack = 1e-9;
        let holds = lo >= k.lambda * (1.0 - slack) && hi <= k.big_lambda * (1.0 + slack);
        r.hypothesis("pinching", holds, format!("det D²u in [{lo:.6}, {hi:.6}], required [{}, {}]", k.lambda, k.big_lambda))
    }

    /// The potential on the same box with `factor` times finer spacing, and
    /// `S(0, height)` on it.
    pub fn refined(&self, factor: usize) -> Result<(Arc<Potential>, SectionSet), HarnessError> {
        let g = self.u.grid();
        let nodes = (self.config.grid.nodes - 1) * factor + 1;
        let grid = crate::geometry::Grid::centered(DIM, self.config.grid.half_width, nodes)?;
        debug_assert_eq!(grid.origin(), g.origin());
        let u = Arc::new(Potential::analytic(grid, self.config.potential.function())?);
        let s = section(&u, &ORIGIN, self.height())?;
        Ok((u, s))
    }

    /// Uniformly chosen member nodes of `s`.
    pub fn random_members(&self, s: &SectionSet, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        let grid = self.u.grid();
        (0..count).map(|_| grid.point(s.cells.indices()[rng.random_range(0..s.cells.len())])).collect()
    }
}

fn not_applicable(mut r: Report, why: &str) -> Report {
    r.not_applicable(why);
    r.finish()
}

/// Member nodes evenly spread through `s`, at most `count`.
fn spread_members(s: &SectionSet, count: usize) -> Vec<usize> {
    let n = s.cells.len();
    let step = (n / count.max(1)).max(1);
    s.cells.iter().step_by(step).take(count).collect()
}

pub fn sections_experiment(s: &Setup) -> Result<Report, HarnessError> {
    let mut r = Report::new("sections");
    if !s.pinching(&mut r, &s.section) {
        return Ok(not_applicable(r, "determinant pinching fails on S(0, h)"));
    }
    let u = &s.u;
    let grid = u.grid();
    let est = &s.config.estimates;

    let mut heights = Vec::new();
    let mut t = s.height();
    while heights.len() < 8 {
        if s.centered(t)?.cells.len() < 100 {
            break;
        }
        heights.push(t);
        t /= 2.0;
    }
    let sweep = volume_ratio_sweep(u, &ORIGIN, &heights)?;
    let mut table = Table::new("volume", &["height", "measure", "ratio", "radius", "cells", "boundary_cells"]);
    let exact = matches!(s.config.potential.family, PotentialFamily::Quadratic | PotentialFamily::Eccentric);
    let det = u.hessian_at(&ORIGIN).determinant();
    let mut defects = 0;
    for (j, row) in sweep.rows.iter().enumerate() {
        let sec = s.centered(row.height)?;
        table.push(vec![
            row.height,
            row.measure,
            row.ratio,
            row.radius,
            sec.cells.len() as f64,
            sec.boundary.len() as f64,
        ]);
        if exact {
            let area = unit_ball_volume(DIM) * (2.0 * row.height).powf(DIM as f64 / 2.0) / det.sqrt();
            let band = sec.boundary.len() as f64 * grid.cell_measure();
            r.check_le(&format!("area error at h={}", row.height), (row.measure - area).abs(), band);
        }
        defects += convexity_defects(grid, &sec.cells, 400, s.seed(10 + j as u64));
    }
    r.check_le("convexity defects", defects as f64, 0.0);
    r.constant("volume ratio min", sweep.min_ratio, "measured |S(0,h)|/h^{n/2}");
    r.constant("volume ratio max", sweep.max_ratio, "measured |S(0,h)|/h^{n/2}");
    r.plot("volume_ratio", sweep.rows.iter().map(|row| (row.height, row.ratio)).collect());
    r.table(table);

    let mut rng = ChaCha8Rng::seed_from_u64(s.seed(1));
    let inner = s.centered(s.height() / 4.0)?;
    let small = s.height() / 16.0;
    let samples: Vec<(Vec<f64>, f64)> = s.random_members(&inner, 8, &mut rng).into_iter().map(|y| (y, small)).collect();
    let eng = estimate_engulfing(u, &samples)?;
    r.constant("theta0 configured", est.theta0, "config estimates.theta0");
    r.check_le("engulfing theta", eng.theta0, est.theta0);
    Ok(r.finish())
}

pub fn normalize_experiment(s: &Setup) -> Result<Report, HarnessError> {
    let mut r = Report::new("normalize");
    if !s.pinching(&mut r, &s.section) {
        return Ok(not_applicable(r, "determinant pinching fails on S(0, h)"));
    }
    let grid = s.u.grid();
    let sec = s.section.clone();
    let n_map = john_normalize(grid, &sec)?;
    let b = normalized_bounds(grid, &sec, &n_map);
    r.check_ge("normalized inner radius", b.inner_radius, 1.0 - b.cell_tolerance);
    r.check_le("normalized outer radius", b.outer_radius, DIM as f64 + b.cell_tolerance);

    let c: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync> = Arc::new(|x: &[f64]| 0.2 + 0.1 * x[0].sin() * x[1].cos());
    let p = s.instance(sec, &s.cofactor_model()).with_zero_order(c);
    let ngrid = normalized_grid(DIM, 2 * s.config.grid.nodes - 1)?;
    let resc = rescale_problem(&p, &n_map.inverse(), &ngrid)?;
    let ck = rescale_checks(&p, &resc);
    let (lo, hi) = p
        .section
        .cells
        .iter()
        .map(|c| s.u.det_hessian(c))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |a, d| (a.0.min(d), a.1.max(d)));
    r.check_le("cofactor residual", ck.cofactor_residual, 1e-6);
    r.check_ge("rescaled det min", ck.det_min, 0.95 * lo);
    r.check_le("rescaled det max", ck.det_max, 1.05 * hi);
    r.check_le("c norm relative error", (ck.c_norm_direct / ck.c_norm_predicted - 1.0).abs(), 0.01);
    let rt = zero_order_round_trip(&p, &resc);
    r.check_le("c round trip", rt.max_error, 2.0 * rt.tolerance);
    r.constant("det A_h", resc.map.det.abs(), "John map of S(0, h)");

    let heights: Vec<f64> = (0..3).map(|j| s.height() / 2f64.powi(j)).collect();
    let sweep = det_ah_sweep(&s.u, &ORIGIN, &heights)?;
    let mut t = Table::new("det_ah", &["height", "det_a", "ratio", "inverse_norm"]);
    for row in &sweep.rows {
        t.push(vec![row.height, row.det_a, row.ratio, row.inverse_norm]);
    }
    r.constant("det A_h / h^{n/2} min", sweep.min_ratio, "measured");
    r.constant("det A_h / h^{n/2} max", sweep.max_ratio, "measured");
    r.table(t);
    Ok(r.finish())
}

pub fn slide_experiment(s: &Setup) -> Result<Report, HarnessError> {
    let mut r = Report::new("slide");
    let u = &s.u;
    let grid = u.grid();
    let est = &s.config.estimates;
    let a = est.opening / s.height();
    let bq = 1.0;
    let v = NodeField::from_function(grid, Arc::new(QuadraticForm::scaled(DIM, bq)))?;
    let vset = s.centered(est.alpha1 * s.height())?;
    if vset.cells.is_empty() {
        return Err(invalid("estimates.alpha1", "vertex section has no grid nodes").into());
    }
    let opts = SlideOptions { refine: true, jacobian_fd: true };
    let vertices: Vec<Vec<f64>> =
        spread_members(&vset, s.config.experiment.samples).into_iter().map(|c| grid.point(c)).collect();
    let records = vertices
        .par_iter()
        .map(|y| slide_paraboloid(u, &v, y, a, &s.section, opts))
        .collect::<Result<Vec<_>, _>>()?;

    let mut t = Table::new(
        "contacts",
        &["y0", "y1", "x0", "x1", "residual", "psd_margin", "jacobian_formula", "jacobian_fd", "on_boundary"],
    );
    for c in &records {
        t.push(vec![
            c.vertex[0],
            c.vertex[1],
            c.contact[0],
            c.contact[1],
            c.first_order_residual,
            c.psd_margin,
            c.jacobian_formula,
            c.jacobian_fd.unwrap_or(f64::NAN),
            if c.on_boundary { 1.0 } else { 0.0 },
        ]);
    }
    let interior: Vec<_> = records.iter().filter(|c| !c.on_boundary).collect();
    r.check_le("boundary contacts", (records.len() - interior.len()) as f64, 0.0);
    let residual = interior.iter().map(|c| c.first_order_residual).fold(0.0, f64::max);
    r.check_le("first-order residual", residual, 4.0 * grid.max_spacing());
    let psd = interior.iter().map(|c| c.psd_margin).fold(f64::INFINITY, f64::min);
    r.check_ge("second-order margin", psd, 0.0);
    let gap = interior.iter().filter_map(|c| c.jacobian_gap()).fold(0.0, f64::max);
    r.check_le("jacobian gap", gap, 0.05);

    if s.config.potential.family == PotentialFamily::Quadratic {
        // u = c|x|²/2 and v = b|x|²/2 touch at x = a c y / (b + a c).
        let c = u.hessian_at(&ORIGIN)[(0, 0)];
        let k = a * c / (bq + a * c);
        let err = interior
            .iter()
            .map(|rec| rec.vertex.iter().zip(&rec.contact).map(|(y, x)| (x - k * y).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        r.check_le("contact location error", err, grid.cell_diagonal());
    }

    // Area formula |V| = ∫_E |det D_x y| on a refined grid, with a stronger
    // contraction so contact cells are shared by several vertices.
    let (fine_u, fine_s) = s.refined(4)?;
    let fine = ProblemInstance::new(fine_u.clone(), fine_s, s.config.constants, &s.cofactor_model());
    let c = fine_u.hessian_at(&ORIGIN).trace() / DIM as f64;
    let vf = NodeField::from_function(fine_u.grid(), Arc::new(QuadraticForm::scaled(DIM, 0.6 * a * c)))?;
    let mr = measure_contacts(&fine, &vf, MeasureRunConfig { alpha1: est.alpha1, opening: a, fd_stride: 0, refine: true })?;
    r.constant("area ratio", mr.contacts.area_ratio(), "|V| over the area-formula integral, grid refined 4x");
    r.check_le("area formula relative error", (mr.contacts.area_ratio() - 1.0).abs(), 0.1);
    r.table(t);
    Ok(r.finish())
}

/// `v = g(u - ℓ)` with `g` decreasing and concave, scaled to equal 1 at
/// height `α₁ t0 / 2`, so `inf_{S(α₁ t0)} v < 1`.
fn measure_samples(s: &Setup, p: &ProblemInstance, count: usize, seed: u64) -> Result<Vec<SolutionSample>, HarnessError> {
    let uf = s
        .u
        .analytic_fn()
        .cloned()
        .ok_or_else(|| HarnessError::HypothesisViolation("composed samples need an analytic potential".into()))?;
    let t0 = p.section.height;
    let at = 0.5 * s.config.estimates.alpha1 * t0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let profiles: Vec<[f64; 3]> = (0..count)
        .map(|_| {
            let g1 = rng.random_range(0.0..1.0) / t0;
            let g2 = rng.random_range(0.0..1.0) / (t0 * t0);
            let floor = rng.random_range(0.01..0.5);
            let g0 = floor + g1 * t0 + g2 * t0 * t0;
            let at_inner = g0 - g1 * at - g2 * at * at;
            [g0 / at_inner, -g1 / at_inner, -g2 / at_inner]
        })
        .collect();
    profiles
        .into_par_iter()
        .map(|g| {
            let f: SharedFunction =
                Arc::new(Composed { u: uf.clone(), tilt: p.section.tilt.clone(), g: Profile::Quadratic(g) });
            Ok(SolutionSample::new(p, f, SolutionFamily::PotentialComposed)?)
        })
        .collect()
}

pub fn measure_experiment(s: &Setup) -> Result<Report, HarnessError> {
    let mut r = Report::new("measure");
    let est = &s.config.estimates;
    let t0 = s.height() / 4.0;
    let s1 = s.centered(t0)?;
    if !s.pinching(&mut r, &s.section) {
        return Ok(not_applicable(r, "determinant pinching fails on S(0, h)"));
    }
    let p = s.instance(s1.clone(), &s.cofactor_model());
    let samples = measure_samples(s, &p, s.config.experiment.samples, s.seed(2))?;
    let grid = s.u.grid();
    let wide = &s.section.cells;
    let cfg = MeasureRunConfig { alpha1: est.alpha1, opening: est.opening / t0, fd_stride: 0, refine: true };
    r.constant("opening a", cfg.opening, "estimates.opening / t0");
    r.constant("M1", est.m1, "config estimates.m1");
    r.constant("delta1", est.delta1, "config estimates.delta1");

    let mut t = Table::new(
        "samples",
        &["index", "inf_v", "budget", "m1_emp", "below_m1_fraction", "boundary_contacts", "monotonicity_violations"],
    );
    let (mut boundary, mut worst_m1, mut worst_frac, mut mono, mut ran) = (0usize, 0.0f64, 1.0f64, 0usize, 0usize);
    for (i, smp) in samples.iter().enumerate() {
        let f_plus = crate::geometry::lp_norm(grid, wide, DIM as f64, |c| smp.f[c].max(0.0));
        let budget = f_plus;
        let mr = measure_contacts(&p, &smp.v, cfg)?;
        let below = s1.cells.iter().filter(|&c| smp.v.value(c) <= est.m1).count() as f64 / s1.cells.len() as f64;
        t.push(vec![
            i as f64,
            mr.inf_v_on_vertices,
            budget,
            mr.m1_emp,
            below,
            mr.boundary_contacts as f64,
            mr.monotonicity_violations as f64,
        ]);
        if budget > est.eps3 || !mr.hypothesis_holds {
            continue;
        }
        ran += 1;
        boundary += mr.boundary_contacts;
        worst_m1 = worst_m1.max(mr.m1_emp);
        worst_frac = worst_frac.min(below);
        mono += mr.monotonicity_violations;
    }
    r.table(t);
    r.hypothesis("samples in budget", ran > 0, format!("{ran} of {} samples meet inf <= 1 and the budget", samples.len()));
    if ran == 0 {
        return Ok(not_applicable(r, "no sample meets the hypotheses"));
    }
    r.check_le("boundary contacts", boundary as f64, 0.0);
    r.check_le("largest contact value", worst_m1, est.m1);
    r.check_ge("fraction below M1", worst_frac, est.delta1);
    r.check_le("monotonicity violations", mono as f64, 0.0);
    Ok(r.finish())
}

fn claim_value(c: ClaimStatus) -> f64 {
    match c {
        ClaimStatus::Holds { margin } => margin,
        ClaimStatus::Violated { amount } => -amount,
        ClaimStatus::NotApplicable => f64::NAN,
    }
}

pub fn doubling_experiment(s: &Setup) -> Result<Report, HarnessError> {
    let mut r = Report::new("doubling");
    let est = &s.config.estimates;
    let p = s.instance(s.section.clone(), &s.cofactor_model());
    let t0 = s.height() / 4.0;
    let params = DoublingParams { alpha: est.alpha1, eps: est.doubling_eps };
    if !(params.alpha < 0.125) {
        return Err(invalid("estimates.alpha1", "the doubling construction needs alpha1 < 1/8").into());
    }
    if !s.pinching(&mut r, &s.section) {
        return Ok(not_applicable(r, "determinant pinching fails on S(0, h)"));
    }
    let uf = s
        .u
        .analytic_fn()
        .cloned()
        .ok_or_else(|| HarnessError::HypothesisViolation("doubling needs an analytic potential".into()))?;
    // v = exp(γ(1 - s/t0)) equals 1 on ∂S_1 and is large enough inside S_α
    // for the gradient claims.
    let gamma = (1.2 * 16.0 / (9.0 * params.alpha)).ln() / (params.eps * (1.0 - params.alpha));
    let vf: SharedFunction = Arc::new(Composed {
        u: uf,
        tilt: s.section.tilt.clone(),
        g: Profile::Exponential { amplitude: gamma.exp(), rate: gamma / t0 },
    });
    let v = NodeField::from_function(s.u.grid(), vf)?;

    let s3 = s.centered(3.0 * t0)?;
    let barrier = correction_barrier(&s.u, &s3, &s.section, 1e-4, s.config.constants.big_lambda, 1e-10)?;
    let s2 = s.centered(2.0 * t0)?;
    let gs = gradient_smallness(&barrier.field, &s2.cells, &s3.cells)?;
    r.constant("barrier sup", barrier.field.sup_bound, "Dirichlet solve on S(0, 4t0)");
    r.check_true("barrier gradient bound", gs.pass);
    let tb = trace_bound(&s.u, &barrier.field, &barrier.bad.cells);
    if tb.cells > 0 {
        r.constant("barrier trace ratio", tb.min_ratio, "min tr((D²u)⁻¹D²h)/2n on the bad set");
    } else {
        r.note("bad set is empty; the correction vanishes");
    }

    let setup = DoublingSetup::new(&p, &v, &barrier.field.h, params)?;
    if !r.hypothesis("inf over S_1 at most 1", setup.hypothesis_holds(), format!("min v = {}", setup.min_v_s1)) {
        return Ok(not_applicable(r, "inf over S_1 exceeds 1"));
    }
    let ys = setup.admissible_vertices(s.config.experiment.samples, s.seed(3));
    let recs = setup.sweep(&ys, SlideOptions { refine: true, jacobian_fd: false })?;
    let mut t = Table::new(
        "vertices",
        &["y0", "y1", "x0", "x1", "q", "claim1", "claim3", "gradient_bound", "large_gradient"],
    );
    let mut violated = 0;
    let mut bad_vertices = 0;
    for rec in &recs {
        t.push(vec![
            rec.contact.vertex[0],
            rec.contact.vertex[1],
            rec.contact.contact[0],
            rec.contact.contact[1],
            rec.q_value,
            claim_value(rec.claim1),
            claim_value(rec.claim3),
            claim_value(rec.gradient_bound),
            claim_value(rec.large_gradient),
        ]);
        if rec.require_claims().is_err() {
            violated += 1;
        }
        if !rec.vertex_condition {
            bad_vertices += 1;
        }
    }
    r.table(t);
    r.check_le("vertex condition failures", bad_vertices as f64, 0.0);
    r.check_le("claim violations", violated as f64, 0.0);
    r.constant("gamma", gamma, "exponent making v equal 1 on the boundary of S_1");
    Ok(r.finish())
}

pub fn cover_experiment(s: &Setup) -> Result<Report, HarnessError> {
    let mut r = Report::new("cover");
    let u = &s.u;
    let grid = u.grid();
    let est = &s.config.estimates;
    let h = s.height();
    let k = est.covering_k();
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed(4));

    let inner = s.centered(h / 4.0)?;
    let items: Vec<(Vec<f64>, f64)> = s
        .random_members(&inner, 50, &mut rng)
        .into_iter()
        .map(|y| {
            let t = h * rng.random_range(0.02..0.1);
            (y, t)
        })
        .collect();
    let coll = match SectionCollection::new(u, &items, est.theta0, k) {
        Ok(c) => c,
        Err(CoveringError::PreconditionViolation(why)) => {
            r.hypothesis("dilates contained", false, why);
            return Ok(not_applicable(r, "section dilates leave the grid"));
        }
        Err(e) => return Err(e.into()),
    };
    let sel = vitali_select(&coll, grid);
    let cert = &sel.certificate;
    r.check_true("selected sections disjoint", cert.disjoint);
    r.check_true("dilates cover the collection", cert.covered);
    r.check_ge("single-dilate containment", cert.single_dilate as f64, coll.len() as f64);
    r.constant("K", k, "2 theta0^2");
    r.constant("selected", sel.selected.len() as f64, "greedy selection");

    let outer = s.centered(h / est.k_hat)?;
    let sampled = dense_sampling(u, &outer, 8)?;
    let run = |e: &CellSet, delta: f64| -> Result<Option<InkSpotsReport>, HarnessError> {
        let f = grow_ink_spots(e, &sampled.sections, delta);
        match ink_spots_step(u, e, &f, &outer, est.k_hat, delta, &sampled) {
            Ok(rep) => Ok(Some(rep)),
            Err(CoveringError::HypothesisViolation { which, .. }) if which == "ii" => Ok(None),
            Err(e) => Err(e.into()),
        }
    };
    let random_set = |rng: &mut ChaCha8Rng| -> Result<CellSet, HarnessError> {
        let pts = s.random_members(&outer, 6, rng);
        let mut e = CellSet::empty();
        for y in pts {
            let sec = section(u, &y, outer.height * rng.random_range(0.01..0.08))?;
            e = e.union(&sec.cells.intersection(&outer.cells));
        }
        Ok(e)
    };

    let mut calibration = Vec::new();
    for _ in 0..s.config.experiment.calibration_samples {
        let e = random_set(&mut rng)?;
        for delta in [0.3, 0.5] {
            calibration.extend(run(&e, delta)?);
        }
    }
    let Some(c2) = calibrate_c2(&calibration) else {
        return Ok(not_applicable(r, "no calibration instance met the hypotheses"));
    };
    r.constant("c2", c2, format!("half the smallest certified factor over {} instances", calibration.len()));

    let mut t = Table::new("ink_spots", &["delta", "e_measure", "f_measure", "ratio", "bound"]);
    let (mut tested, mut failures, mut skipped) = (0, 0, 0);
    for _ in 0..s.config.experiment.test_samples {
        let e = random_set(&mut rng)?;
        for delta in [0.3, 0.4, 0.5] {
            match run(&e, delta)? {
                Some(rep) => {
                    tested += 1;
                    if !rep.conclusion_holds(c2) {
                        failures += 1;
                    }
                    t.push(vec![delta, rep.e_measure, rep.f_measure, rep.ratio, 1.0 - c2 * delta]);
                }
                None => skipped += 1,
            }
        }
    }
    r.note(format!("{skipped} test instances violate the density hypothesis and are not applicable"));
    r.table(t);
    r.check_ge("ink-spots instances tested", tested as f64, 1.0);
    r.check_le("ink-spots failures", failures as f64, 0.0);
    Ok(r.finish())
}
