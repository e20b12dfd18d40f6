//! Contact engines: generalized paraboloids slid against a test function,
//! the measure-estimate contact set, and the doubling construction with the
//! `(v + 1)^{-ε}` transform.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GeometryError, SlidingError};
use crate::geometry::linalg::min_eigenvalue;
use crate::geometry::{CellSet, Grid, NodeField, Potential};
use crate::normalization::ProblemInstance;
use crate::sections::{section_with_tilt, SectionSet, Tilt};

/// `C - a [u(x) - u(y) - Du(y)·(x - y)]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedParaboloid {
    pub opening: f64,
    pub vertex: Vec<f64>,
    pub offset: f64,
    tilt: Tilt,
}

impl GeneralizedParaboloid {
    pub fn new(u: &Potential, vertex: &[f64], opening: f64, offset: f64) -> Result<Self, SlidingError> {
        if !(opening > 0.0) {
            return Err(GeometryError::InvalidParameter(format!("opening must be positive, got {opening}")).into());
        }
        let tilt = Tilt::at_point(u, vertex)?;
        Ok(GeneralizedParaboloid { opening, vertex: vertex.to_vec(), offset, tilt })
    }

    pub fn tilt(&self) -> &Tilt {
        &self.tilt
    }

    pub fn value_node(&self, u: &Potential, idx: usize) -> f64 {
        self.offset - self.opening * self.tilt.bracket_node(u, idx)
    }

    pub fn value_at(&self, u: &Potential, x: &[f64]) -> f64 {
        self.offset - self.opening * self.tilt.bracket_point(u, x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlideOptions {
    /// Sub-cell location of interior extrema from a local quadratic fit.
    pub refine: bool,
    /// Finite-difference Jacobian of the vertex-to-contact map.
    pub jacobian_fd: bool,
}

impl Default for SlideOptions {
    fn default() -> Self {
        SlideOptions { refine: true, jacobian_fd: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactRecord {
    pub vertex: Vec<f64>,
    pub contact: Vec<f64>,
    /// Node nearest to `contact`.
    pub contact_cell: usize,
    /// Node where the discrete extremum sits.
    pub scan_cell: usize,
    pub opening: f64,
    pub touched_value: f64,
    pub gradient: Vec<f64>,
    /// `det D_x y` from central differences of `y ↦ x`; zero when the
    /// stencil contacts collapse, `None` when a stencil contact hit the
    /// boundary or differences were not requested.
    pub jacobian_fd: Option<f64>,
    pub jacobian_formula: f64,
    pub on_boundary: bool,
    /// Residual of the first-order contact condition.
    pub first_order_residual: f64,
    /// Smallest eigenvalue of the second-order touching matrix.
    pub psd_margin: f64,
    pub snapped: bool,
}

impl ContactRecord {
    pub fn gradient_norm(&self) -> f64 {
        self.gradient.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// `|fd - formula| / max(1, formula)`.
    pub fn jacobian_gap(&self) -> Option<f64> {
        self.jacobian_fd.map(|fd| (fd - self.jacobian_formula).abs() / self.jacobian_formula.abs().max(1.0))
    }
}

struct Located {
    cell: usize,
    point: Vec<f64>,
    on_boundary: bool,
}

/// Exhaustive scan for the minimum of `obj` over `closure`; ties go to the
/// lowest cell index.
fn locate_min<F: Fn(usize) -> f64 + Sync>(
    grid: &Grid,
    closure: &CellSet,
    boundary: &CellSet,
    obj: F,
    refine: Option<&GradHess<'_>>,
) -> Result<Located, SlidingError> {
    if closure.is_empty() {
        return Err(SlidingError::EmptyDomain);
    }
    let pick = |a: (f64, usize), b: (f64, usize)| {
        if a.0.is_nan() {
            a
        } else if b.0.is_nan() || b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) {
            b
        } else {
            a
        }
    };
    let (value, cell) = closure
        .indices()
        .par_iter()
        .map(|&c| (obj(c), c))
        .reduce(|| (f64::INFINITY, usize::MAX), pick);
    if !value.is_finite() {
        let at = if cell == usize::MAX { Vec::new() } else { grid.point(cell) };
        return Err(SlidingError::NonFiniteField(at));
    }
    let on_boundary = boundary.contains(cell);
    let mut point = grid.point(cell);
    if let (Some(gh), false) = (refine, on_boundary) {
        let delta = newton_polish(grid, &point, gh).or_else(|| quadratic_offset(grid, cell, &obj));
        if let Some(delta) = delta {
            point.iter_mut().zip(delta.iter()).for_each(|(p, d)| *p += d);
        }
    }
    Ok(Located { cell, point, on_boundary })
}

/// Gradient and Hessian of a scan objective at a point.
type GradHess<'a> = dyn Fn(&[f64]) -> (DVector<f64>, DMatrix<f64>) + Sync + 'a;

/// Newton iteration for a stationary point of the objective from `start`;
/// the offset is kept only if it converges within two cells of the start.
fn newton_polish(grid: &Grid, start: &[f64], gh: &GradHess<'_>) -> Option<DVector<f64>> {
    let h = grid.spacing();
    let x0 = DVector::from_column_slice(start);
    let mut x = x0.clone();
    for _ in 0..50 {
        let (g, hm) = gh(x.as_slice());
        let step = -hm.cholesky()?.solve(&g);
        x += &step;
        if !grid.contains_point(x.as_slice()) {
            return None;
        }
        if step.norm() < 1e-13 * (1.0 + x.norm()) {
            let d = &x - &x0;
            return d.iter().zip(h).all(|(d, h)| d.abs() <= 2.0 * h).then_some(d);
        }
    }
    None
}

/// Minimizer offset of the quadratic through the 3^n stencil values, when
/// that quadratic is strictly convex and its minimizer stays within a cell.
fn quadratic_offset<F: Fn(usize) -> f64>(grid: &Grid, cell: usize, obj: &F) -> Option<DVector<f64>> {
    let n = grid.dim();
    let h = grid.spacing();
    let at = |d: &[isize]| grid.shift(cell, d).map(obj);
    let p0 = obj(cell);
    let mut g = DVector::zeros(n);
    let mut hm = DMatrix::zeros(n, n);
    let mut d = [0isize; 3];
    for k in 0..n {
        d[k] = 1;
        let fp = at(&d)?;
        d[k] = -1;
        let fm = at(&d)?;
        d[k] = 0;
        g[k] = (fp - fm) / (2.0 * h[k]);
        hm[(k, k)] = (fp - 2.0 * p0 + fm) / (h[k] * h[k]);
        for l in 0..k {
            let mut corner = |sk: isize, sl: isize| {
                d[k] = sk;
                d[l] = sl;
                let v = at(&d);
                d[k] = 0;
                d[l] = 0;
                v
            };
            let v = (corner(1, 1)? - corner(1, -1)? - corner(-1, 1)? + corner(-1, -1)?) / (4.0 * h[k] * h[l]);
            hm[(k, l)] = v;
            hm[(l, k)] = v;
        }
    }
    let delta = -hm.cholesky()?.solve(&g);
    if delta.iter().zip(h).any(|(d, h)| d.abs() > *h) {
        return None;
    }
    Some(delta)
}

/// Minimizer of `obj_at` over the half-step lattice spanned by `closure`,
/// for confirming the extremum cell of a scan.
pub fn rescan_double_resolution<F: Fn(&[f64]) -> f64 + Sync>(grid: &Grid, closure: &CellSet, obj_at: F) -> Vec<f64> {
    let n = grid.dim();
    let h = grid.spacing().to_vec();
    let upper = grid.upper();
    let (_, best) = closure
        .indices()
        .par_iter()
        .flat_map_iter(|&c| {
            let base = grid.point(c);
            let upper = &upper;
            let h = &h;
            (0..(1usize << n)).filter_map(move |mask| {
                let p: Vec<f64> =
                    (0..n).map(|k| base[k] + if mask >> k & 1 == 1 { 0.5 * h[k] } else { 0.0 }).collect();
                (0..n).all(|k| p[k] <= upper[k]).then_some(p)
            })
        })
        .map(|p| (obj_at(&p), p))
        .reduce(
            || (f64::INFINITY, Vec::new()),
            |a, b| if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a },
        );
    best
}

/// Central differences of a vertex-to-contact map at `y` with one grid step.
/// Returns `det D_x y` (zero on collapse) and whether collapse happened.
fn fd_jacobian<F>(grid: &Grid, y: &[f64], contact: F) -> Result<Option<(f64, bool)>, SlidingError>
where
    F: Fn(&[f64]) -> Result<Option<Vec<f64>>, SlidingError>,
{
    let n = grid.dim();
    let mut dyx = DMatrix::zeros(n, n);
    for k in 0..n {
        let s = grid.spacing()[k];
        let mut yp = y.to_vec();
        let mut ym = y.to_vec();
        yp[k] += s;
        ym[k] -= s;
        let (Some(xp), Some(xm)) = (contact(&yp)?, contact(&ym)?) else {
            return Ok(None);
        };
        for i in 0..n {
            dyx[(i, k)] = (xp[i] - xm[i]) / (2.0 * s);
        }
    }
    let det = dyx.determinant();
    if det <= 1e-9 {
        Ok(Some((0.0, true)))
    } else {
        Ok(Some((1.0 / det, false)))
    }
}

/// Slides generalized paraboloids of opening `a` and vertex `y` from below
/// until they touch `v` on the closure of `domain`: the contact minimizes
/// `v(·) + a [u(·) - u(y) - Du(y)·(· - y)]`.
pub fn slide_paraboloid(
    u: &Potential,
    v: &NodeField,
    y: &[f64],
    a: f64,
    domain: &SectionSet,
    opts: SlideOptions,
) -> Result<ContactRecord, SlidingError> {
    let closure = domain.closure();
    slide_in(u, v, y, a, &closure, &domain.boundary, opts)
}

fn slide_in(
    u: &Potential,
    v: &NodeField,
    y: &[f64],
    a: f64,
    closure: &CellSet,
    boundary: &CellSet,
    opts: SlideOptions,
) -> Result<ContactRecord, SlidingError> {
    let grid = u.grid();
    let locate = |y: &[f64]| -> Result<Located, SlidingError> {
        let para = GeneralizedParaboloid::new(u, y, a, 0.0)?;
        let du_y = u.gradient_at(y);
        let gh = move |z: &[f64]| (v.gradient_at(z) + (u.gradient_at(z) - &du_y) * a, v.hessian_at(z) + u.hessian_at(z) * a);
        let refine: Option<&GradHess<'_>> = if opts.refine { Some(&gh) } else { None };
        locate_min(grid, closure, boundary, |z| v.value(z) - para.value_node(u, z), refine)
    };
    let loc = locate(y)?;
    let x = loc.point.clone();
    let du_y = u.gradient_at(y);
    let du_x = u.gradient_at(&x);
    let dv_x = v.gradient_at(&x);
    let hu_x = u.hessian_at(&x);
    let hv_x = v.hessian_at(&x);
    let jacobian_formula = (&hu_x + &hv_x / a).determinant() / u.hessian_at(y).determinant();
    let (jacobian_fd, snapped) = if opts.jacobian_fd && !loc.on_boundary {
        let fd = fd_jacobian(grid, y, |yy| {
            if !grid.contains_point(yy) {
                return Ok(None);
            }
            let l = locate(yy)?;
            Ok((!l.on_boundary).then_some(l.point))
        })?;
        match fd {
            Some((j, s)) => (Some(j), s),
            None => (None, false),
        }
    } else {
        (None, false)
    };
    Ok(ContactRecord {
        vertex: y.to_vec(),
        contact_cell: grid.nearest(&x).unwrap_or(loc.cell),
        scan_cell: loc.cell,
        opening: a,
        touched_value: v.value_at(&x),
        gradient: dv_x.as_slice().to_vec(),
        jacobian_fd,
        jacobian_formula,
        on_boundary: loc.on_boundary,
        first_order_residual: (&du_y - &du_x - &dv_x / a).norm(),
        psd_margin: min_eigenvalue(&(&hv_x + &hu_x * a)),
        snapped,
        contact: x,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactSet {
    pub records: Vec<ContactRecord>,
    pub vertex_set_measure: f64,
    pub contact_measure: f64,
    /// `Σ |det D_x y| · cell` over distinct contact cells, with the
    /// Jacobian averaged over the records landing in each cell.
    pub area_formula_integral: f64,
}

impl ContactSet {
    pub fn new(grid: &Grid, records: Vec<ContactRecord>, vertex_cells: usize) -> Self {
        let mut by_cell: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for r in &records {
            let e = by_cell.entry(r.contact_cell).or_insert((0.0, 0));
            e.0 += r.jacobian_formula.abs();
            e.1 += 1;
        }
        let cell = grid.cell_measure();
        let area_formula_integral = by_cell.values().map(|(s, k)| s / *k as f64).sum::<f64>() * cell;
        ContactSet {
            vertex_set_measure: vertex_cells as f64 * cell,
            contact_measure: by_cell.len() as f64 * cell,
            area_formula_integral,
            records,
        }
    }

    pub fn boundary_count(&self) -> usize {
        self.records.iter().filter(|r| r.on_boundary).count()
    }

    /// `|V| / Σ_E |det D_x y|·cell`.
    pub fn area_ratio(&self) -> f64 {
        self.vertex_set_measure / self.area_formula_integral
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureRunConfig {
    pub alpha1: f64,
    pub opening: f64,
    /// Finite-difference Jacobians on every `fd_stride`-th vertex, none when 0.
    pub fd_stride: usize,
    pub refine: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    pub config: MeasureRunConfig,
    pub vertex_count: usize,
    pub interior_fraction: f64,
    pub boundary_contacts: usize,
    /// Largest `v` over contact points.
    pub m1_emp: f64,
    /// `inf_V v`; the run's hypothesis asks for at most one.
    pub inf_v_on_vertices: f64,
    pub hypothesis_holds: bool,
    pub witness: Vec<f64>,
    /// `|{v < M1_emp} ∩ S_1| / |S_1|`.
    pub below_m1_fraction: f64,
    pub max_first_order_residual: f64,
    pub min_psd_margin: f64,
    pub max_jacobian_gap: Option<f64>,
    /// Contacts whose value exceeds the paraboloid through the witness.
    pub monotonicity_violations: usize,
    pub contacts: ContactSet,
}

/// Slides from every vertex node of `V = S_u(x0, α₁ t0)` against `v` on the
/// closure of `S_1 = S_u(x0, t0)`, the instance's section. Reports even when
/// contacts reach the boundary.
pub fn measure_contacts(p: &ProblemInstance, v: &NodeField, cfg: MeasureRunConfig) -> Result<MeasureReport, SlidingError> {
    let u = &p.potential;
    let grid = u.grid();
    let s1 = &p.section;
    if !(cfg.alpha1 > 0.0 && cfg.alpha1 < 1.0) {
        return Err(GeometryError::InvalidParameter(format!("alpha1 must lie in (0, 1), got {}", cfg.alpha1)).into());
    }
    let vset = section_with_tilt(u, s1.tilt.clone(), cfg.alpha1 * s1.height)?;
    if vset.cells.is_empty() {
        return Err(SlidingError::EmptyDomain);
    }
    let closure = s1.closure();
    if let Some(c) = closure.iter().find(|&c| !v.value(c).is_finite()) {
        return Err(SlidingError::NonFiniteField(grid.point(c)));
    }
    let (inf_v, witness) = vset
        .cells
        .iter()
        .map(|c| (v.value(c), c))
        .fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a });

    let vertices: Vec<(usize, usize)> = vset.cells.iter().enumerate().collect();
    let records: Vec<ContactRecord> = vertices
        .par_iter()
        .map(|&(k, c)| {
            let opts = SlideOptions {
                refine: cfg.refine,
                jacobian_fd: cfg.fd_stride > 0 && k % cfg.fd_stride == 0,
            };
            slide_in(u, v, &grid.point(c), cfg.opening, &closure, &s1.boundary, opts)
        })
        .collect::<Result<_, _>>()?;

    let a = cfg.opening;
    let mut monotonicity_violations = 0;
    for r in &records {
        let tilt = Tilt::at_point(u, &r.vertex)?;
        let p_witness = v.value(witness) + a * tilt.bracket_node(u, witness);
        if v.value(r.scan_cell) > p_witness + 1e-12 * (1.0 + p_witness.abs()) {
            monotonicity_violations += 1;
        }
    }
    let interior: Vec<ContactRecord> = records.iter().filter(|r| !r.on_boundary).cloned().collect();
    let m1_emp = records.iter().map(|r| v.value(r.scan_cell)).fold(f64::NEG_INFINITY, f64::max);
    let below = s1.cells.iter().filter(|&c| v.value(c) < m1_emp).count();
    let max_first_order_residual = interior.iter().map(|r| r.first_order_residual).fold(0.0, f64::max);
    let min_psd_margin = interior.iter().map(|r| r.psd_margin).fold(f64::INFINITY, f64::min);
    let gaps: Vec<f64> = interior.iter().filter_map(|r| r.jacobian_gap()).collect();
    let max_jacobian_gap = (!gaps.is_empty()).then(|| gaps.iter().cloned().fold(0.0, f64::max));
    let vertex_count = records.len();
    let contacts = ContactSet::new(grid, records, vertex_count);
    Ok(MeasureReport {
        config: cfg,
        vertex_count,
        interior_fraction: interior.len() as f64 / vertex_count as f64,
        boundary_contacts: contacts.boundary_count(),
        m1_emp,
        inf_v_on_vertices: inf_v,
        hypothesis_holds: inf_v <= 1.0,
        witness: grid.point(witness),
        below_m1_fraction: below as f64 / s1.cells.len() as f64,
        max_first_order_residual,
        min_psd_margin,
        max_jacobian_gap,
        monotonicity_violations,
        contacts,
    })
}

/// [`measure_contacts`] failing with `ContainmentFailure` when any contact
/// lies on the boundary of `S_1`.
pub fn measure_estimate_run(p: &ProblemInstance, v: &NodeField, cfg: MeasureRunConfig) -> Result<MeasureReport, SlidingError> {
    let r = measure_contacts(p, v, cfg)?;
    if r.boundary_contacts > 0 {
        return Err(SlidingError::ContainmentFailure { a: cfg.opening, boundary_count: r.boundary_contacts });
    }
    Ok(r)
}

/// Boundary-contact counts across openings, locating the containment
/// threshold.
pub fn opening_sweep(
    p: &ProblemInstance,
    v: &NodeField,
    alpha1: f64,
    openings: &[f64],
) -> Result<Vec<(f64, usize)>, SlidingError> {
    openings
        .iter()
        .map(|&a| {
            let cfg = MeasureRunConfig { alpha1, opening: a, fd_stride: 0, refine: false };
            Ok((a, measure_contacts(p, v, cfg)?.boundary_contacts))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ClaimStatus {
    Holds { margin: f64 },
    Violated { amount: f64 },
    NotApplicable,
}

impl ClaimStatus {
    fn from_margin(margin: f64, applicable: bool) -> Self {
        if !applicable {
            ClaimStatus::NotApplicable
        } else if margin >= 0.0 {
            ClaimStatus::Holds { margin }
        } else {
            ClaimStatus::Violated { amount: -margin }
        }
    }

    pub fn is_violated(&self) -> bool {
        matches!(self, ClaimStatus::Violated { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoublingParams {
    /// Inner section fraction, in `(0, 1/8)`.
    pub alpha: f64,
    pub eps: f64,
}

impl DoublingParams {
    /// `min{log₂(4 / (3(1 + α))), δ α² / (32 (1 + Λ̃/λ̃) n⁴)}`.
    pub fn eps_cap(&self, delta: f64, lambda_tilde: f64, big_lambda_tilde: f64, n: usize) -> f64 {
        let a = self.alpha;
        (4.0 / (3.0 * (1.0 + a))).log2().min(delta * a * a / (32.0 * (1.0 + big_lambda_tilde / lambda_tilde) * (n as f64).powi(4)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoublingRecord {
    /// Contact with opening 3/4; `jacobian_formula` is
    /// `det(D²u(x) - D²h_δ(x) - (4/3) D²w(x)) / det D²u(y)`.
    pub contact: ContactRecord,
    pub q_value: f64,
    pub w_value: f64,
    pub grad_w_norm: f64,
    /// `x ∈ S_3 \ S_α`.
    pub claim1: ClaimStatus,
    /// `(v(x) + 1)^ε <= 1/α`.
    pub claim3: ClaimStatus,
    /// `|Dw(x)| >= α t0 / (2n)`.
    pub gradient_bound: ClaimStatus,
    /// `|Dv(x)| >= α t0 / (2nε)`.
    pub large_gradient: ClaimStatus,
    /// `|Du(y) - Du(x0)| <= α t0 / (16 n)`.
    pub vertex_condition: bool,
}

impl DoublingRecord {
    pub fn require_claims(&self) -> Result<(), SlidingError> {
        for (name, c) in [
            ("1", self.claim1),
            ("3", self.claim3),
            ("gradient", self.gradient_bound),
            ("large-gradient", self.large_gradient),
        ] {
            if let ClaimStatus::Violated { amount } = c {
                return Err(SlidingError::ClaimViolation { claim: name.to_string(), amount });
            }
        }
        Ok(())
    }
}

/// Precomputed sections for the doubling construction on the instance
/// section `S_u(x0, 4 t0)`; `S_t` below means `S_u(x0, t·t0)`.
#[derive(Clone, Debug)]
pub struct DoublingSetup<'a> {
    pub problem: &'a ProblemInstance,
    pub v: &'a NodeField,
    pub h_delta: &'a NodeField,
    pub params: DoublingParams,
    pub t0: f64,
    pub s1: SectionSet,
    pub s3: SectionSet,
    pub s_alpha: SectionSet,
    /// `min v` over the closure of `S_1` and where it is attained.
    pub min_v_s1: f64,
    pub witness: Vec<f64>,
}

impl<'a> DoublingSetup<'a> {
    pub fn new(
        problem: &'a ProblemInstance,
        v: &'a NodeField,
        h_delta: &'a NodeField,
        params: DoublingParams,
    ) -> Result<Self, SlidingError> {
        if !(params.alpha > 0.0 && params.alpha < 0.125) || !(params.eps > 0.0) {
            return Err(GeometryError::InvalidParameter(format!(
                "need 0 < alpha < 1/8 and eps > 0, got {:?}",
                params
            ))
            .into());
        }
        let u = &problem.potential;
        let tilt = problem.section.tilt.clone();
        let t0 = problem.section.height / 4.0;
        let s1 = section_with_tilt(u, tilt.clone(), t0)?;
        let s3 = section_with_tilt(u, tilt.clone(), 3.0 * t0)?;
        let s_alpha = section_with_tilt(u, tilt, params.alpha * t0)?;
        if s3.cells.is_empty() {
            return Err(SlidingError::EmptyDomain);
        }
        let (min_v_s1, wc) = s1
            .closure()
            .iter()
            .map(|c| (v.value(c), c))
            .fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a });
        Ok(DoublingSetup {
            witness: u.grid().point(wc),
            problem,
            v,
            h_delta,
            params,
            t0,
            s1,
            s3,
            s_alpha,
            min_v_s1,
        })
    }

    /// Whether some point of the closure of `S_1` has `v <= 1`.
    pub fn hypothesis_holds(&self) -> bool {
        self.min_v_s1 <= 1.0
    }

    fn w(&self, vx: f64) -> f64 {
        (vx + 1.0).powf(-self.params.eps)
    }

    /// `-Q_y` at node `z`.
    fn neg_q(&self, tilt: &Tilt, z: usize) -> f64 {
        let u = &self.problem.potential;
        -(self.w(self.v.value(z)) - 0.75 * (tilt.bracket_node(u, z) - self.h_delta.value(z)))
    }

    fn locate(&self, y: &[f64], closure: &CellSet, refine: bool) -> Result<Located, SlidingError> {
        let u = &self.problem.potential;
        let tilt = Tilt::at_point(u, y)?;
        let du_y = u.gradient_at(y);
        let gh = move |z: &[f64]| {
            let (dw, d2w) = self.w_derivatives(z);
            let g = (u.gradient_at(z) - &du_y - self.h_delta.gradient_at(z)) * 0.75 - dw;
            let hm = (u.hessian_at(z) - self.h_delta.hessian_at(z)) * 0.75 - d2w;
            (g, hm)
        };
        let refine: Option<&GradHess<'_>> = if refine { Some(&gh) } else { None };
        locate_min(u.grid(), closure, &self.s3.boundary, |z| self.neg_q(&tilt, z), refine)
    }

    /// `Dw` and `D²w` for `w = (v + 1)^{-ε}`.
    fn w_derivatives(&self, x: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let eps = self.params.eps;
        let vx = self.v.value_at(x);
        let dv = self.v.gradient_at(x);
        let d2v = self.v.hessian_at(x);
        let dw = &dv * (-eps * (vx + 1.0).powf(-eps - 1.0));
        let d2w = &dv * dv.transpose() * (eps * (eps + 1.0) * (vx + 1.0).powf(-eps - 2.0))
            - d2v * (eps * (vx + 1.0).powf(-eps - 1.0));
        (dw, d2w)
    }

    /// `Q_y` at an arbitrary point.
    pub fn q_at(&self, y: &[f64], x: &[f64]) -> Result<f64, SlidingError> {
        let u = &self.problem.potential;
        let tilt = Tilt::at_point(u, y)?;
        Ok(self.w(self.v.value_at(x)) - 0.75 * (tilt.bracket_point(u, x) - self.h_delta.value_at(x)))
    }

    /// Maximum point of `Q_y` over the closure of `S_3` with claim
    /// diagnostics.
    pub fn contact(&self, y: &[f64], opts: SlideOptions) -> Result<DoublingRecord, SlidingError> {
        let u = &self.problem.potential;
        let grid = u.grid();
        let n = grid.dim();
        let eps = self.params.eps;
        let alpha = self.params.alpha;
        let closure = self.s3.closure();
        let loc = self.locate(y, &closure, opts.refine)?;
        let x = loc.point.clone();

        let vx = self.v.value_at(&x);
        let dv = self.v.gradient_at(&x);
        let wx = self.w(vx);
        let (dw, d2w) = self.w_derivatives(&x);
        let hu_x = u.hessian_at(&x);
        let hh = self.h_delta.hessian_at(&x);
        let rhs = &hu_x - &hh - &d2w * (4.0 / 3.0);
        let jacobian_formula = rhs.determinant() / u.hessian_at(y).determinant();
        let du_y = u.gradient_at(y);
        let first_order_residual = (&dw - (u.gradient_at(&x) - &du_y - self.h_delta.gradient_at(&x)) * 0.75).norm();

        let (jacobian_fd, snapped) = if opts.jacobian_fd && !loc.on_boundary {
            match fd_jacobian(grid, y, |yy| {
                if !grid.contains_point(yy) {
                    return Ok(None);
                }
                let l = self.locate(yy, &closure, opts.refine)?;
                Ok((!l.on_boundary).then_some(l.point))
            })? {
                Some((j, s)) => (Some(j), s),
                None => (None, false),
            }
        } else {
            (None, false)
        };

        let applicable = self.hypothesis_holds();
        let b0 = self.s3.tilt.bracket_point(u, &x);
        let t0 = self.t0;
        let claim1_margin = if loc.on_boundary { -(b0 - 3.0 * t0).abs().max(grid.max_spacing()) } else {
            (b0 - alpha * t0).min(3.0 * t0 - b0)
        };
        let du_x0 = u.gradient_at(self.s3.center());
        Ok(DoublingRecord {
            q_value: wx - 0.75 * (Tilt::at_point(u, y)?.bracket_point(u, &x) - self.h_delta.value_at(&x)),
            w_value: wx,
            grad_w_norm: dw.norm(),
            claim1: ClaimStatus::from_margin(claim1_margin, applicable),
            claim3: ClaimStatus::from_margin(1.0 / alpha - (vx + 1.0).powf(eps), applicable),
            gradient_bound: ClaimStatus::from_margin(dw.norm() - alpha * t0 / (2.0 * n as f64), applicable),
            large_gradient: ClaimStatus::from_margin(dv.norm() - alpha * t0 / (2.0 * n as f64 * eps), applicable),
            vertex_condition: (&du_y - du_x0).norm() <= alpha * t0 / (16.0 * n as f64),
            contact: ContactRecord {
                vertex: y.to_vec(),
                contact_cell: grid.nearest(&x).unwrap_or(loc.cell),
                scan_cell: loc.cell,
                opening: 0.75,
                touched_value: vx,
                gradient: dv.as_slice().to_vec(),
                jacobian_fd,
                jacobian_formula,
                on_boundary: loc.on_boundary,
                first_order_residual,
                psd_margin: min_eigenvalue(&((&hu_x - &hh) * 0.75 - &d2w)),
                snapped,
                contact: x,
            },
        })
    }

    /// Vertices satisfying `|Du(y) - Du(x0)| <= α t0 / (16 n)`: random
    /// directions, radius uniform up to the admissible limit found by
    /// bisection along each direction.
    pub fn admissible_vertices(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let u = &self.problem.potential;
        let n = u.dim();
        let x0 = DVector::from_column_slice(self.s3.center());
        let du0 = u.gradient_at(x0.as_slice());
        let bound = self.params.alpha * self.t0 / (16.0 * n as f64);
        let ok = |y: &DVector<f64>| u.grid().contains_point(y.as_slice()) && (u.gradient_at(y.as_slice()) - &du0).norm() <= bound;
        let reach = self.s3.max_radius(u.grid()).max(u.grid().max_spacing());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let mut d = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
                if d.norm() < 1e-12 {
                    d[0] = 1.0;
                }
                d /= d.norm();
                let (mut lo, mut hi) = (0.0, reach);
                for _ in 0..50 {
                    let mid = 0.5 * (lo + hi);
                    if ok(&(&x0 + &d * mid)) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let r = lo * rng.random_range(0.0..1.0);
                (&x0 + d * r).as_slice().to_vec()
            })
            .collect()
    }

    pub fn sweep(&self, vertices: &[Vec<f64>], opts: SlideOptions) -> Result<Vec<DoublingRecord>, SlidingError> {
        vertices.par_iter().map(|y| self.contact(y, opts)).collect()
    }
}

/// One doubling contact; see [`DoublingSetup::contact`].
pub fn doubling_contact(
    p: &ProblemInstance,
    v: &NodeField,
    y: &[f64],
    params: DoublingParams,
    h_delta: &NodeField,
) -> Result<DoublingRecord, SlidingError> {
    DoublingSetup::new(p, v, h_delta, params)?.contact(y, SlideOptions::default())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundForm {
    /// `C (1 + |b|ⁿ + |c⁻|ⁿ + |f⁺|ⁿ)`.
    Measure,
    /// `C (|b|ⁿ + |c⁻|ⁿ + |f⁺|ⁿ)`.
    Doubling,
}

pub fn bound_terms(form: BoundForm, p: &ProblemInstance, x: &[f64]) -> f64 {
    let n = p.dim() as i32;
    let s = (p.b)(x).norm().powi(n) + (-(p.c)(x)).max(0.0).powi(n) + (p.f)(x).max(0.0).powi(n);
    match form {
        BoundForm::Measure => 1.0 + s,
        BoundForm::Doubling => s,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

/// `|det D_x y| <= C · terms(x)` with `C` frozen from a calibration batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JacobianBound {
    pub form: BoundForm,
    pub constant: f64,
    pub calibration_size: usize,
}

impl JacobianBound {
    pub fn calibrate(form: BoundForm, records: &[ContactRecord], p: &ProblemInstance) -> Self {
        let constant = records
            .iter()
            .filter(|r| !r.on_boundary)
            .map(|r| {
                let t = bound_terms(form, p, &r.contact);
                if t > 0.0 { r.jacobian_formula.abs() / t } else { 0.0 }
            })
            .fold(0.0, f64::max);
        JacobianBound { form, constant, calibration_size: records.len() }
    }

    pub fn check(&self, record: &ContactRecord, p: &ProblemInstance, tol: f64) -> BoundCheck {
        let lhs = record.jacobian_formula.abs();
        let rhs = self.constant * bound_terms(self.form, p, &record.contact);
        BoundCheck { lhs, rhs, pass: lhs <= rhs * (1.0 + tol) }
    }
}

/// The calibration-free single-record form: `lhs = |det D_x y|` against
/// `C · terms(x)` for a given `C`.
pub fn jacobian_bound_check(record: &ContactRecord, p: &ProblemInstance, form: BoundForm, c: f64) -> BoundCheck {
    JacobianBound { form, constant: c, calibration_size: 0 }.check(record, p, 0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientFilter {
    pub threshold: f64,
    pub retained: Vec<DoublingRecord>,
    pub total: usize,
    pub retention: f64,
}

impl GradientFilter {
    pub fn all_retained(&self) -> bool {
        self.retained.len() == self.total
    }
}

/// Keeps records with `|Dv(x)| >= multiplier · α t0 / (2nε)`.
pub fn large_gradient_filter(
    records: &[DoublingRecord],
    params: DoublingParams,
    t0: f64,
    dim: usize,
    multiplier: f64,
) -> GradientFilter {
    let threshold = multiplier * params.alpha * t0 / (2.0 * dim as f64 * params.eps);
    let retained: Vec<DoublingRecord> =
        records.iter().filter(|r| r.contact.gradient_norm() >= threshold).cloned().collect();
    let retention = if records.is_empty() { 1.0 } else { retained.len() as f64 / records.len() as f64 };
    GradientFilter { threshold, total: records.len(), retention, retained }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::ProptestConfig;
    use proptest::{prop_assert, proptest};

    use super::*;
    use crate::geometry::families::{AffineFunction, SumFunction};
    use crate::geometry::{GaussianBump, QuadraticForm, SharedFunction, StructuralConstants};
    use crate::normalization::CoefficientModel;
    use crate::sections::section;

    fn potential(f: SharedFunction, hw: f64, nodes: usize) -> Arc<Potential> {
        Arc::new(Potential::analytic(Grid::centered(f.dim(), hw, nodes).unwrap(), f).unwrap())
    }

    fn consts() -> StructuralConstants {
        StructuralConstants { lambda: 1.0, big_lambda: 1.0, lambda_tilde: 1.0, big_lambda_tilde: 1.0, p: 4.0 }
    }

    fn instance(u: Arc<Potential>, h: f64) -> ProblemInstance {
        let s = section(&u, &vec![0.0; u.dim()], h).unwrap();
        ProblemInstance::new(u, s, consts(), &CoefficientModel::Cofactor { scale: 1.0 })
    }

    fn quadratic_v(grid: &Grid, b: f64) -> NodeField {
        NodeField::from_function(grid, Arc::new(QuadraticForm::scaled(grid.dim(), b))).unwrap()
    }

    #[test]
    fn paraboloid_peaks_at_vertex() {
        let u = potential(Arc::new(QuadraticForm::eccentric(2, 3.0)), 1.5, 31);
        let p = GeneralizedParaboloid::new(&u, &[0.2, -0.1], 2.0, 1.5).unwrap();
        assert!((p.value_at(&u, &[0.2, -0.1]) - 1.5).abs() < 1e-14);
        for i in 0..u.grid().len() {
            assert!(p.value_node(&u, i) <= 1.5 + 1e-14);
        }
        assert!(GeneralizedParaboloid::new(&u, &[0.0, 0.0], 0.0, 0.0).is_err());
    }

    #[test]
    fn zero_field_touches_at_vertex() {
        let u = potential(Arc::new(QuadraticForm::eccentric(2, 2.0)), 1.5, 61);
        let s = section(&u, &[0.0, 0.0], 0.6).unwrap();
        let v = NodeField::constant(u.grid(), 0.0);
        for &c in s.cells.indices().iter().step_by(97) {
            let y = u.grid().point(c);
            let r = slide_paraboloid(&u, &v, &y, 1.0, &s, SlideOptions::default()).unwrap();
            assert_eq!(r.scan_cell, c);
            assert!(r.contact.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-9));
            if let Some(j) = r.jacobian_fd {
                assert!((j - 1.0).abs() < 1e-6, "{j}");
            }
            assert!((r.jacobian_formula - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_contact_map_is_linear() {
        let u = potential(Arc::new(QuadraticForm::identity(2)), 1.5, 101);
        let s = section(&u, &[0.0, 0.0], 0.8).unwrap();
        let (a, b) = (2.0, 1.0);
        let v = quadratic_v(u.grid(), b);
        let y = [0.37, -0.21];
        let r = slide_paraboloid(&u, &v, &y, a, &s, SlideOptions::default()).unwrap();
        let k = a / (a + b);
        assert!((r.contact[0] - k * y[0]).abs() < 1e-9 && (r.contact[1] - k * y[1]).abs() < 1e-9);
        assert!((r.jacobian_formula - (1.0 + b / a).powi(2)).abs() < 1e-12);
        assert!(r.jacobian_gap().unwrap() < 0.05);
        assert!(r.first_order_residual < 1e-9);
        assert!(!r.on_boundary);
    }

    #[test]
    fn bump_jacobians_agree() {
        let u = potential(Arc::new(QuadraticForm::identity(2)), 1.5, 121);
        let s = section(&u, &[0.0, 0.0], 0.8).unwrap();
        let bump: SharedFunction =
            Arc::new(GaussianBump { amplitude: 0.15, center: DVector::from_vec(vec![0.1, 0.05]), sigma: 0.5 });
        let v = NodeField::from_function(u.grid(), bump).unwrap();
        let mut worst = 0.0f64;
        for k in 0..12 {
            let t = k as f64 / 12.0 * std::f64::consts::TAU;
            let y = [0.4 * t.cos(), 0.4 * t.sin()];
            let r = slide_paraboloid(&u, &v, &y, 1.0, &s, SlideOptions::default()).unwrap();
            worst = worst.max(r.jacobian_gap().unwrap());
            assert!(r.psd_margin > 0.0);
        }
        assert!(worst < 0.05, "{worst}");
    }

    #[test]
    fn double_resolution_confirms_scan() {
        let u = potential(Arc::new(QuadraticForm::identity(2)), 1.5, 61);
        let s = section(&u, &[0.0, 0.0], 0.8).unwrap();
        let v = quadratic_v(u.grid(), 0.5);
        let y = [0.3, 0.2];
        let r = slide_paraboloid(&u, &v, &y, 1.0, &s, SlideOptions::default()).unwrap();
        let tilt = Tilt::at_point(&u, &y).unwrap();
        let best = rescan_double_resolution(u.grid(), &s.closure(), |x| v.value_at(x) + tilt.bracket_point(&u, x));
        let d: f64 = best.iter().zip(&r.contact).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(d <= u.grid().cell_diagonal(), "{d}");
    }

    #[test]
    fn non_finite_field_is_reported() {
        let u = potential(Arc::new(QuadraticForm::identity(2)), 1.0, 21);
        let s = section(&u, &[0.0, 0.0], 0.3).unwrap();
        let mut vals = vec![0.0; u.grid().len()];
        vals[s.cells.indices()[3]] = f64::NAN;
        let v = NodeField::from_values(u.grid(), vals, "nan").unwrap();
        let r = slide_paraboloid(&u, &v, &[0.0, 0.0], 1.0, &s, SlideOptions::default());
        assert!(matches!(r, Err(SlidingError::NonFiniteField(_))));
        let mut empty = s.clone();
        empty.cells = CellSet::empty();
        empty.boundary = CellSet::empty();
        let v0 = NodeField::constant(u.grid(), 0.0);
        assert!(matches!(
            slide_paraboloid(&u, &v0, &[0.0, 0.0], 1.0, &empty, SlideOptions::default()),
            Err(SlidingError::EmptyDomain)
        ));
    }

    #[test]
    fn constant_field_area_identity_is_exact() {
        let u = potential(Arc::new(QuadraticForm::identity(2)), 1.5, 61);
        let p = instance(u.clone(), 0.5);
        let v = NodeField::constant(u.grid(), 1.0);
        let cfg = MeasureRunConfig { alpha1: 0.1, opening: 3.0, fd_stride: 0, refine: true };
        let r = measure_estimate_run(&p, &v, cfg).unwrap();
        assert!(r.contacts.records.iter().all(|c| c.scan_cell == u.grid().nearest(&c.vertex).unwrap()));
        assert!((r.contacts.area_ratio() - 1.0).abs() < 1e-12);
        assert_eq!(r.m1_emp, 1.0);
        assert!(r.hypothesis_holds);
        assert_eq!(r.monotonicity_violations, 0);
    }

    #[test]
    fn quadratic_field_area_formula() {
        let u = potential(Arc::new(QuadraticForm::identity(2)), 1.5, 151);
        let p = instance(u.clone(), 0.5);
        let grid = u.grid();
        let f: SharedFunction = Arc::new(SumFunction {
            terms: vec![
                Arc::new(QuadraticForm::scaled(2, 1.0)) as SharedFunction,
                Arc::new(GaussianBump { amplitude: 0.01, center: DVector::from_vec(vec![0.0, 0.1]), sigma: 0.5 }),
            ],
        });
        let v = NodeField::from_function(grid, f).unwrap();
        let cfg = MeasureRunConfig { alpha1: 0.2, opening: 4.0, fd_stride: 7, refine: true };
        let r = measure_estimate_run(&p, &v, cfg).unwrap();
        assert!((r.contacts.area_ratio() - 1.0).abs() < 0.05, "{}", r.contacts.area_ratio());
        assert!(r.max_first_order_residual < grid.max_spacing());
        assert!(r.min_psd_margin > 0.0);
        assert_eq!(r.monotonicity_violations, 0);
        assert!(r.max_jacobian_gap.unwrap() < 0.05);
    }

    #[test]
    fn small_opening_fails_containment() {
        let u = potential(Arc::new(QuadraticForm::identity(2)), 1.5, 81);
        let p = instance(u.clone(), 0.5);
        let v = NodeField::from_function(
            u.grid(),
            Arc::new(AffineFunction { constant: 6.0, slope: DVector::from_vec(vec![4.0, 0.0]) }),
        )
        .unwrap();
        let cfg = |a| MeasureRunConfig { alpha1: 0.1, opening: a, fd_stride: 0, refine: false };
        match measure_estimate_run(&p, &v, cfg(1.0)) {
            Err(SlidingError::ContainmentFailure { a, boundary_count }) => {
                assert_eq!(a, 1.0);
                assert!(boundary_count > 0);
            }
            other => panic!("expected containment failure, got {other:?}"),
        }
        assert!(measure_estimate_run(&p, &v, cfg(40.0)).is_ok());
        let sweep = opening_sweep(&p, &v, 0.1, &[1.0, 2.0, 4.0, 8.0, 16.0, 40.0]).unwrap();
        assert!(sweep.windows(2).all(|w| w[1].1 <= w[0].1), "{sweep:?}");
    }

    fn doubling_case() -> (ProblemInstance, NodeField, NodeField) {
        // u = |x|², S_u(0, 4) is the disk of radius 2 ⊃ B_1; S_1 has radius 1.
        let u = potential(Arc::new(QuadraticForm::scaled(2, 2.0)), 2.3, 93);
        let p = instance(u.clone(), 4.0);
        // v = 1 on ∂S_1 and v > 1.4e5 on S_α for α = 0.1, so that
        // M^ε >= 16 / (9α) holds with ε = 1/4.
        let sigma: f64 = 0.2;
        let amp = (1.0 / (2.0 * sigma * sigma)).exp();
        let v = NodeField::from_function(
            u.grid(),
            Arc::new(GaussianBump { amplitude: amp, center: DVector::zeros(2), sigma }),
        )
        .unwrap();
        let h = NodeField::constant(u.grid(), 0.0);
        (p, v, h)
    }

    #[test]
    fn doubling_contacts_avoid_inner_section() {
        let (p, v, h) = doubling_case();
        let params = DoublingParams { alpha: 0.1, eps: 0.25 };
        let setup = DoublingSetup::new(&p, &v, &h, params).unwrap();
        assert!(setup.hypothesis_holds());
        let ys = setup.admissible_vertices(20, 7);
        let recs = setup.sweep(&ys, SlideOptions { refine: true, jacobian_fd: false }).unwrap();
        let grid = p.grid();
        let closure = setup.s3.closure();
        for (y, r) in ys.iter().zip(&recs) {
            assert!(r.vertex_condition);
            assert!(matches!(r.claim1, ClaimStatus::Holds { .. }), "{:?}", r.claim1);
            assert!(matches!(r.claim3, ClaimStatus::Holds { .. }));
            r.require_claims().unwrap();
            // The maximizer sits on a near-degenerate ring, so compare values.
            let best = rescan_double_resolution(grid, &closure, |x| -setup.q_at(y, x).unwrap());
            let q_best = setup.q_at(y, &best).unwrap();
            assert!(q_best - r.q_value <= 1e-3, "{q_best} {}", r.q_value);
            let b = setup.s3.tilt.bracket_point(&p.potential, &best);
            assert!(b >= 0.1 * setup.t0 && b < 3.0 * setup.t0);
        }
        let filt = large_gradient_filter(&recs, params, setup.t0, 2, 1.0);
        assert!(filt.all_retained());
        assert!(large_gradient_filter(&[], params, 1.0, 2, 1.0).retained.is_empty());
    }

    #[test]
    fn doubling_without_low_point_is_not_applicable() {
        let (p, _, h) = doubling_case();
        let v = NodeField::constant(p.grid(), 50.0);
        let params = DoublingParams { alpha: 0.1, eps: 0.25 };
        let r = doubling_contact(&p, &v, &[0.0, 0.0], params, &h).unwrap();
        assert_eq!(r.claim1, ClaimStatus::NotApplicable);
        assert_eq!(r.claim3, ClaimStatus::NotApplicable);
        assert!(r.require_claims().is_ok());
    }

    #[test]
    fn doubling_jacobians_converge() {
        // Off-center bump: unique maximizer on the rim of the region where
        // v >> 1. The vertex stencil is one grid step, so agreement improves
        // with resolution.
        let mut gaps = Vec::new();
        for nodes in [93, 185, 369] {
            let u = potential(Arc::new(QuadraticForm::scaled(2, 2.0)), 2.3, nodes);
            let p = instance(u.clone(), 4.0);
            let h = NodeField::constant(p.grid(), 0.0);
            let sigma: f64 = 0.2;
            let bump = GaussianBump {
                amplitude: (1.0 / (2.0 * sigma * sigma)).exp(),
                center: DVector::from_vec(vec![0.3, 0.1]),
                sigma,
            };
            let v = NodeField::from_function(p.grid(), Arc::new(bump)).unwrap();
            let setup = DoublingSetup::new(&p, &v, &h, DoublingParams { alpha: 0.1, eps: 0.25 }).unwrap();
            let r = setup.contact(&[0.0, 0.0], SlideOptions::default()).unwrap();
            assert!(r.contact.first_order_residual < 1e-9);
            gaps.push(r.contact.jacobian_gap().unwrap());
        }
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
        assert!(gaps[2] < 0.05, "{gaps:?}");
    }

    #[test]
    fn eps_cap_takes_the_smaller_branch() {
        let p = DoublingParams { alpha: 0.1, eps: 0.01 };
        let cap = p.eps_cap(1.0, 1.0, 1.0, 2);
        assert!((cap - 0.01 / (32.0 * 2.0 * 16.0)).abs() < 1e-15);
        assert!((p.eps_cap(1e9, 1.0, 1.0, 2) - (4.0 / 3.3f64).log2()).abs() < 1e-12);
    }

    #[test]
    fn jacobian_bound_calibration() {
        let u = potential(Arc::new(QuadraticForm::identity(2)), 1.5, 81);
        let p = instance(u.clone(), 0.8);
        let (a, b) = (2.0, 1.0);
        let v = quadratic_v(u.grid(), b);
        let r = slide_paraboloid(&u, &v, &[0.2, 0.1], a, &p.section, SlideOptions::default()).unwrap();
        let bound = JacobianBound::calibrate(BoundForm::Measure, std::slice::from_ref(&r), &p);
        assert!((bound.constant - (1.0 + b / a).powi(2)).abs() < 1e-12);
        assert!(bound.check(&r, &p, 0.0).pass);
        let zero = NodeField::constant(u.grid(), 0.0);
        let r0 = slide_paraboloid(&u, &zero, &[0.2, 0.1], a, &p.section, SlideOptions::default()).unwrap();
        let ck = jacobian_bound_check(&r0, &p, BoundForm::Measure, 1.0);
        assert!((ck.lhs - 1.0).abs() < 1e-12 && ck.pass);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn first_order_condition_at_interior_contacts(
            y0 in -0.4f64..0.4, y1 in -0.4f64..0.4, a in 1.0f64..4.0, b in 0.0f64..2.0,
        ) {
            let u = potential(Arc::new(QuadraticForm::eccentric(2, 1.5)), 1.6, 61);
            let s = section(&u, &[0.0, 0.0], 0.7).unwrap();
            let v = quadratic_v(u.grid(), b);
            let r = slide_paraboloid(&u, &v, &[y0, y1], a, &s, SlideOptions { refine: true, jacobian_fd: false }).unwrap();
            if !r.on_boundary {
                prop_assert!(r.first_order_residual <= 4.0 * u.grid().max_spacing());
                prop_assert!(r.psd_margin >= -1e-9);
            }
            prop_assert!(r.jacobian_formula >= 0.0);
        }
    }
}
