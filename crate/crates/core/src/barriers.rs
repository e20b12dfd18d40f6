//! Barrier families: the bad set of large Hessians, the Monge-Ampère
//! correction solved by a monotone wide-stencil scheme, the classical
//! subsolution `Ṽ^{-m} - 2^{-m}` and the Harnack barrier `t(1-u)^{-β}`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::BarrierError;
use crate::fit::power_fit;
use crate::geometry::checks::DomainShape;
use crate::geometry::{CellSet, Grid, NodeField, Potential};
use crate::sections::{convexity_defects, SectionSet, Tilt};

/// Cells of a section where the Hessian operator norm reaches `1/eps`.
#[derive(Clone, Debug)]
pub struct BadSet {
    pub eps: f64,
    pub cells: CellSet,
    pub measure: f64,
    /// Quadrature of `‖D²u‖` over the section.
    pub hessian_integral: f64,
    /// Quadrature of `Δu` over the section; dominates `hessian_integral`.
    pub laplacian_integral: f64,
    pub chebyshev_bound: f64,
}

impl BadSet {
    pub fn chebyshev_holds(&self) -> bool {
        self.measure <= self.chebyshev_bound * (1.0 + 1e-12)
    }
}

fn operator_norm(h: &DMatrix<f64>) -> f64 {
    let sym = (h + h.transpose()) * 0.5;
    sym.symmetric_eigenvalues().iter().fold(0.0f64, |m, e| m.max(e.abs()))
}

pub fn bad_set(u: &Potential, eps: f64, s3: &SectionSet) -> Result<BadSet, BarrierError> {
    if !(eps > 0.0) {
        return Err(BarrierError::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let grid = u.grid();
    let dv = grid.cell_measure();
    let mut bad = Vec::new();
    let mut hessian_integral = 0.0;
    let mut laplacian_integral = 0.0;
    for c in s3.cells.iter() {
        let h = u.hessian(c);
        let norm = operator_norm(&h);
        hessian_integral += norm * dv;
        laplacian_integral += h.trace() * dv;
        if norm >= 1.0 / eps {
            bad.push(c);
        }
    }
    let cells = CellSet::from_unsorted(bad);
    let measure = cells.measure(grid);
    Ok(BadSet { eps, cells, measure, hessian_integral, laplacian_integral, chebyshev_bound: eps * hessian_integral })
}

/// Right-hand side weight: 1 on the bad set, `eps` away from it, linear
/// across a one-cell ring.
#[derive(Clone, Debug)]
pub struct Mollifier {
    pub eps: f64,
    /// Node values over the whole grid (`eps` outside the domain).
    pub values: Vec<f64>,
    pub integral: f64,
    pub bad_measure: f64,
    pub ring_measure: f64,
    pub domain_measure: f64,
}

impl Mollifier {
    /// `[|H|, |H| + |ring| + eps |S|]`, the bracket any such weight obeys.
    pub fn summation_bounds(&self) -> (f64, f64) {
        (self.bad_measure, self.bad_measure + self.ring_measure + self.eps * self.domain_measure)
    }
}

pub fn mollifier(grid: &Grid, bad: &CellSet, domain: &CellSet, eps: f64) -> Mollifier {
    let dilated = bad.dilate(grid, 1).intersection(domain);
    let ring = dilated.difference(bad);
    let mut values = vec![eps; grid.len()];
    for c in ring.iter() {
        values[c] = 0.5 * (1.0 + eps);
    }
    for c in bad.iter() {
        values[c] = 1.0;
    }
    let dv = grid.cell_measure();
    let integral = domain.iter().map(|c| values[c]).sum::<f64>() * dv;
    Mollifier {
        eps,
        values,
        integral,
        bad_measure: bad.intersection(domain).measure(grid),
        ring_measure: ring.measure(grid),
        domain_measure: domain.measure(grid),
    }
}

/// Orthogonal lattice direction pairs of the 2-D wide stencil.
const PAIRS: [([isize; 2], [isize; 2]); 4] =
    [([1, 0], [0, 1]), ([1, 1], [1, -1]), ([2, 1], [-1, 2]), ([1, 2], [2, -1])];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub residual: f64,
    /// Accepted Newton step length after backtracking.
    pub step: f64,
}

#[derive(Clone, Debug)]
pub struct BarrierField {
    /// Solution on the grid, zero off the domain.
    pub h: NodeField,
    pub domain: CellSet,
    pub det_target: Vec<f64>,
    pub sup_bound: f64,
    pub residual: f64,
    pub trace: Vec<TraceRow>,
    /// Smallest directional second difference over the domain.
    pub min_second_difference: f64,
    pub boundary_max: f64,
    discrete_det: Vec<f64>,
}

impl BarrierField {
    pub fn iterations(&self) -> usize {
        self.trace.len().saturating_sub(1)
    }

    /// Wide-stencil determinant at a domain node.
    pub fn discrete_det(&self, cell: usize) -> Option<f64> {
        self.domain.indices().binary_search(&cell).ok().map(|k| self.discrete_det[k])
    }

    /// Smallest `det / target` over `cells` (domain members only).
    pub fn det_ratio_on(&self, cells: &CellSet) -> f64 {
        cells
            .iter()
            .filter_map(|c| self.discrete_det(c).map(|d| d / self.det_target[c]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn residual_monotone(&self) -> bool {
        self.trace.windows(2).all(|w| w[1].residual <= w[0].residual)
    }
}

struct Stencil {
    /// Per unknown and pair: the four neighbors `+v, -v, +w, -w`.
    nbrs: Vec<[[Option<usize>; 4]; 4]>,
    /// `|v|² h²` per pair.
    scale: [f64; 4],
}

impl Stencil {
    fn new(grid: &Grid, domain: &CellSet) -> Self {
        let h = grid.spacing()[0];
        let pos = |c: Option<usize>| c.and_then(|c| domain.indices().binary_search(&c).ok());
        let nbrs = domain
            .iter()
            .map(|c| {
                let mut out = [[None; 4]; 4];
                for (p, (v, w)) in PAIRS.iter().enumerate() {
                    out[p] = [
                        pos(grid.shift(c, v)),
                        pos(grid.shift(c, &[-v[0], -v[1]])),
                        pos(grid.shift(c, w)),
                        pos(grid.shift(c, &[-w[0], -w[1]])),
                    ];
                }
                out
            })
            .collect();
        let scale = PAIRS.map(|(v, _)| (v[0] * v[0] + v[1] * v[1]) as f64 * h * h);
        Stencil { nbrs, scale }
    }

    fn at(u: &[f64], j: Option<usize>) -> f64 {
        j.map_or(0.0, |j| u[j])
    }

    /// Directional second differences `(D_vv, D_ww)` of pair `p` at unknown `k`.
    fn second(&self, u: &[f64], k: usize, p: usize) -> (f64, f64) {
        let nb = &self.nbrs[k][p];
        let s = self.scale[p];
        (
            (Self::at(u, nb[0]) + Self::at(u, nb[1]) - 2.0 * u[k]) / s,
            (Self::at(u, nb[2]) + Self::at(u, nb[3]) - 2.0 * u[k]) / s,
        )
    }

    /// Convexity-penalized product; equals `D_vv D_ww` when both are positive.
    fn pair_value(a: f64, b: f64) -> f64 {
        a.max(0.0) * b.max(0.0) + a.min(0.0) + b.min(0.0)
    }

    /// Discrete operator and its active pair at unknown `k`.
    fn operator(&self, u: &[f64], k: usize) -> (f64, usize) {
        (0..PAIRS.len())
            .map(|p| {
                let (a, b) = self.second(u, k, p);
                (Self::pair_value(a, b), p)
            })
            .fold((f64::INFINITY, 0), |best, cur| if cur.0 < best.0 { cur } else { best })
    }
}

/// Banded LU without pivoting; the systems here are diagonally dominant.
struct Band {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl Band {
    fn new(n: usize, bw: usize) -> Self {
        Band { n, bw, data: vec![0.0; n * (2 * bw + 1)] }
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        i * (2 * self.bw + 1) + (j + self.bw - i)
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    fn solve(mut self, rhs: &mut [f64]) -> Result<(), BarrierError> {
        let (n, bw) = (self.n, self.bw);
        for k in 0..n {
            let pivot = self.data[self.idx(k, k)];
            if pivot.abs() < 1e-300 || !pivot.is_finite() {
                return Err(BarrierError::NoConvergence { iterations: 0, residual: f64::NAN });
            }
            let end = n.min(k + bw + 1);
            for i in k + 1..end {
                let ik = self.idx(i, k);
                let l = self.data[ik] / pivot;
                if l == 0.0 {
                    continue;
                }
                self.data[ik] = l;
                for j in k + 1..end {
                    let kj = self.data[self.idx(k, j)];
                    let ij = self.idx(i, j);
                    self.data[ij] -= l * kj;
                }
                rhs[i] -= l * rhs[k];
            }
        }
        for k in (0..n).rev() {
            let end = n.min(k + bw + 1);
            let mut s = rhs[k];
            for j in k + 1..end {
                s -= self.data[self.idx(k, j)] * rhs[j];
            }
            rhs[k] = s / self.data[self.idx(k, k)];
        }
        Ok(())
    }
}

fn bandwidth(st: &Stencil) -> usize {
    let mut bw = 1;
    for (k, row) in st.nbrs.iter().enumerate() {
        for j in row.iter().flatten().flatten() {
            bw = bw.max(k.abs_diff(*j));
        }
    }
    bw
}

/// Five-point Poisson solve `Δu = g` with zero exterior values.
fn poisson(st: &Stencil, g: &[f64]) -> Result<Vec<f64>, BarrierError> {
    let n = g.len();
    let mut band = Band::new(n, bandwidth(st));
    let s = st.scale[0];
    let mut rhs: Vec<f64> = g.iter().map(|x| x * s).collect();
    for k in 0..n {
        band.add(k, k, -4.0);
        for j in st.nbrs[k][0].iter().flatten() {
            band.add(k, *j, 1.0);
        }
    }
    band.solve(&mut rhs)?;
    Ok(rhs)
}

/// Solves `det D²h = rhs` on `domain` with `h = 0` outside it, in two
/// dimensions, by damped Newton iteration on the monotone 8-direction
/// wide-stencil scheme. Nodes whose stencil leaves the domain read the
/// boundary value 0 there.
pub fn ma_dirichlet_solve(grid: &Grid, domain: &CellSet, rhs: &[f64], tol: f64) -> Result<BarrierField, BarrierError> {
    const MAX_ITER: usize = 60;
    if grid.dim() != 2 {
        return Err(BarrierError::UnsupportedDimension(grid.dim()));
    }
    let sp = grid.spacing();
    if (sp[0] - sp[1]).abs() > 1e-12 * sp[0] {
        return Err(BarrierError::InvalidParameter("wide stencil needs equal spacing".into()));
    }
    if rhs.len() != grid.len() {
        return Err(BarrierError::InvalidParameter(format!("rhs has {} nodes, grid {}", rhs.len(), grid.len())));
    }
    if domain.is_empty() {
        return Err(BarrierError::InvalidParameter("empty domain".into()));
    }
    if let Some(c) = domain.iter().find(|&c| !(rhs[c] > 0.0 && rhs[c].is_finite())) {
        return Err(BarrierError::InvalidParameter(format!("rhs must be positive, got {} at node {c}", rhs[c])));
    }
    if convexity_defects(grid, domain, 200, 0) > 0 {
        return Err(BarrierError::NonConvexDomain);
    }

    let st = Stencil::new(grid, domain);
    let f: Vec<f64> = domain.iter().map(|c| rhs[c]).collect();
    let n = f.len();
    let bw = bandwidth(&st);

    let g: Vec<f64> = f.iter().map(|x| 2.0 * x.sqrt()).collect();
    let mut u = poisson(&st, &g)?;
    let residual_of = |u: &[f64]| -> (Vec<f64>, f64) {
        let r: Vec<f64> = (0..n).map(|k| st.operator(u, k).0 - f[k]).collect();
        let m = r.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        (r, m)
    };
    let (mut r, mut res) = residual_of(&u);
    let mut trace = vec![TraceRow { iteration: 0, residual: res, step: 0.0 }];

    let mut it = 0;
    while res > tol {
        if it == MAX_ITER {
            return Err(BarrierError::NoConvergence { iterations: it, residual: res });
        }
        it += 1;
        let mut jac = Band::new(n, bw);
        for k in 0..n {
            let (_, p) = st.operator(&u, k);
            let (a, b) = st.second(&u, k, p);
            let da = if a > 0.0 { b.max(0.0) } else { 1.0 };
            let db = if b > 0.0 { a.max(0.0) } else { 1.0 };
            let s = st.scale[p];
            jac.add(k, k, -2.0 * (da + db) / s);
            let nb = st.nbrs[k][p];
            for (slot, coef) in [(0, da), (1, da), (2, db), (3, db)] {
                if let Some(j) = nb[slot] {
                    jac.add(k, j, coef / s);
                }
            }
        }
        let mut delta: Vec<f64> = r.iter().map(|x| -x).collect();
        jac.solve(&mut delta).map_err(|_| BarrierError::NoConvergence { iterations: it, residual: res })?;

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let trial: Vec<f64> = u.iter().zip(&delta).map(|(a, d)| a + step * d).collect();
            let (tr, tres) = residual_of(&trial);
            if tres < res {
                accepted = Some((trial, tr, tres));
                break;
            }
            step *= 0.5;
        }
        let Some((nu, nr, nres)) = accepted else {
            return Err(BarrierError::NoConvergence { iterations: it, residual: res });
        };
        log::debug!("ma newton {it}: residual {nres:.3e} step {step}");
        u = nu;
        r = nr;
        res = nres;
        trace.push(TraceRow { iteration: it, residual: res, step });
    }

    let mut values = vec![0.0; grid.len()];
    for (k, c) in domain.iter().enumerate() {
        values[c] = u[k];
    }
    let min_second_difference = (0..n)
        .flat_map(|k| (0..PAIRS.len()).map(move |p| (k, p)))
        .map(|(k, p)| {
            let (a, b) = st.second(&u, k, p);
            a.min(b)
        })
        .fold(f64::INFINITY, f64::min);
    let discrete_det = (0..n).map(|k| st.operator(&u, k).0).collect();
    let sup_bound = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let boundary_max = domain.outer_ring(grid).iter().map(|c| values[c].abs()).fold(0.0, f64::max);
    let h = NodeField::from_values(grid, values, "ma-barrier")?;
    Ok(BarrierField {
        h,
        domain: domain.clone(),
        det_target: rhs.to_vec(),
        sup_bound,
        residual: res,
        trace,
        min_second_difference,
        boundary_max,
        discrete_det,
    })
}

/// The correction `h_ε` for one threshold: bad set in `S3`, weight on `S4`
/// and the Dirichlet solve with right-hand side `2ⁿ Λ φ`.
#[derive(Clone, Debug)]
pub struct CorrectionBarrier {
    pub bad: BadSet,
    pub phi: Mollifier,
    pub field: BarrierField,
}

pub fn correction_barrier(
    u: &Potential,
    s3: &SectionSet,
    s4: &SectionSet,
    eps: f64,
    big_lambda: f64,
    tol: f64,
) -> Result<CorrectionBarrier, BarrierError> {
    let grid = u.grid();
    let bad = bad_set(u, eps, s3)?;
    let phi = mollifier(grid, &bad.cells, &s4.cells, eps);
    let scale = 2f64.powi(grid.dim() as i32) * big_lambda;
    let rhs: Vec<f64> = phi.values.iter().map(|p| scale * p).collect();
    let field = ma_dirichlet_solve(grid, &s4.cells, &rhs, tol)?;
    Ok(CorrectionBarrier { bad, phi, field })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsSweepRow {
    pub eps: f64,
    pub bad_measure: f64,
    pub phi_integral: f64,
    pub sup_h: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpsSweep {
    pub rows: Vec<EpsSweepRow>,
    /// Fitted exponent of `sup|h_ε|` against `ε`.
    pub exponent: f64,
    /// Smallest `C₁` with `sup|h_ε| ≤ C₁ ε^{1/n}` on every row.
    pub c1: f64,
}

pub fn eps_sweep(
    u: &Potential,
    s3: &SectionSet,
    s4: &SectionSet,
    big_lambda: f64,
    eps: &[f64],
    tol: f64,
) -> Result<EpsSweep, BarrierError> {
    let n = u.dim() as f64;
    let mut rows = Vec::with_capacity(eps.len());
    for &e in eps {
        let cb = correction_barrier(u, s3, s4, e, big_lambda, tol)?;
        rows.push(EpsSweepRow {
            eps: e,
            bad_measure: cb.bad.measure,
            phi_integral: cb.phi.integral,
            sup_h: cb.field.sup_bound,
            iterations: cb.field.iterations(),
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.sup_h).collect();
    let fit = power_fit(&xs, &ys, 2).map_err(|e| BarrierError::InvalidParameter(e.to_string()))?;
    let c1 = rows.iter().map(|r| r.sup_h / r.eps.powf(1.0 / n)).fold(0.0, f64::max);
    Ok(EpsSweep { rows, exponent: fit.slope, c1 })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientSmallness {
    pub max_gradient: f64,
    pub distance: f64,
    pub bound: f64,
    pub pass: bool,
}

/// `max_{S2}|Dh| ≤ sup|h| / dist(S3, ∂S4)`.
pub fn gradient_smallness(field: &BarrierField, s2: &CellSet, s3: &CellSet) -> Result<GradientSmallness, BarrierError> {
    let grid = field.h.grid();
    let shape = DomainShape::new(grid, &field.domain)?;
    let distance = s3.iter().map(|c| shape.boundary_distance(&grid.point(c))).fold(f64::INFINITY, f64::min);
    if !(distance > 0.0) {
        return Err(BarrierError::InvalidParameter("inner section touches the domain boundary".into()));
    }
    let max_gradient = s2.iter().map(|c| field.h.gradient(c).norm()).fold(0.0, f64::max);
    let bound = field.sup_bound / distance;
    Ok(GradientSmallness { max_gradient, distance, bound, pass: max_gradient <= bound })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceBound {
    /// Smallest `tr((D²u)⁻¹ D²h) / 2n` over the cells.
    pub min_ratio: f64,
    /// Smallest `(det D²h / det D²u)^{1/n} / 2` over the cells.
    pub min_det_ratio: f64,
    pub cells: usize,
}

impl TraceBound {
    pub fn holds(&self, tol: f64) -> bool {
        self.cells == 0 || self.min_ratio >= 1.0 - tol
    }
}

/// Evaluates `u^{ij} h_ij ≥ 2n` on `cells`, with `D²h` from finite differences.
pub fn trace_bound(u: &Potential, field: &BarrierField, cells: &CellSet) -> TraceBound {
    let n = u.dim() as f64;
    let mut min_ratio = f64::INFINITY;
    let mut min_det_ratio = f64::INFINITY;
    for c in cells.iter() {
        let hu = u.hessian(c);
        let Some(inv) = hu.clone().try_inverse() else { continue };
        let hh = field.h.hessian(c);
        min_ratio = min_ratio.min((&inv * &hh).trace() / (2.0 * n));
        let ratio = (hh.determinant().max(0.0) / hu.determinant()).powf(1.0 / n) / 2.0;
        min_det_ratio = min_det_ratio.min(ratio);
    }
    TraceBound { min_ratio, min_det_ratio, cells: cells.len() }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubsolutionReport {
    pub m: f64,
    pub cells: usize,
    pub min_shifted: f64,
    /// Smallest operator value divided by its natural scale.
    pub min_relative: f64,
    pub violation_cells: usize,
    pub violation_measure: f64,
}

impl SubsolutionReport {
    pub fn is_subsolution(&self) -> bool {
        self.violation_cells == 0
    }
}

/// Evaluates `u^{ij} W̃_ij` for `W̃ = Ṽ^{-m} - 2^{-m}`, `Ṽ = u - ℓ - h` (with
/// `ℓ` the supporting plane of `tilt`), cellwise on `annulus`.
pub fn classical_subsolution_check(
    u: &Potential,
    h: &NodeField,
    m: f64,
    tilt: &Tilt,
    annulus: &CellSet,
) -> Result<SubsolutionReport, BarrierError> {
    if !(m >= 0.0) {
        return Err(BarrierError::InvalidParameter(format!("m must be nonnegative, got {m}")));
    }
    let grid = u.grid();
    let slope = DVector::from_column_slice(&tilt.slope);
    let mut min_shifted = f64::INFINITY;
    let mut min_relative = f64::INFINITY;
    let mut violations = 0;
    for c in annulus.iter() {
        let vt = tilt.bracket_node(u, c) - h.value(c);
        min_shifted = min_shifted.min(vt);
        if !(vt > 0.0) {
            return Err(BarrierError::DomainViolation(vt));
        }
        let hu = u.hessian(c);
        let inv = hu.try_inverse().ok_or_else(|| BarrierError::InvalidParameter("singular Hessian".into()))?;
        let dv = u.gradient_vec(c) - &slope - h.gradient(c);
        let d2v = u.hessian(c) - h.hessian(c);
        let grad_term = (m + 1.0) * (dv.transpose() * &inv * &dv)[(0, 0)];
        let hess_term = vt * (&inv * &d2v).trace();
        let scale = grad_term.abs() + hess_term.abs();
        let relative = if m == 0.0 || scale == 0.0 { 0.0 } else { (grad_term - hess_term) / scale };
        min_relative = min_relative.min(relative);
        if relative < -1e-9 {
            violations += 1;
        }
    }
    Ok(SubsolutionReport {
        m,
        cells: annulus.len(),
        min_shifted,
        min_relative,
        violation_cells: violations,
        violation_measure: violations as f64 * grid.cell_measure(),
    })
}

/// Runs the check over increasing `ms`; returns all reports and the first
/// `m` with an empty violation set.
pub fn minimal_subsolution_exponent(
    u: &Potential,
    h: &NodeField,
    tilt: &Tilt,
    annulus: &CellSet,
    ms: &[f64],
) -> Result<(Vec<SubsolutionReport>, Option<f64>), BarrierError> {
    let mut reports = Vec::with_capacity(ms.len());
    let mut first = None;
    for &m in ms {
        let r = classical_subsolution_check(u, h, m, tilt, annulus)?;
        if first.is_none() && m > 0.0 && r.is_subsolution() {
            first = Some(m);
        }
        reports.push(r);
    }
    Ok((reports, first))
}

/// Solves `M((1-ρ)^{-β} - 1) = 1/2` for `β`.
pub fn beta_choice(m: f64, rho: f64) -> Result<f64, BarrierError> {
    if !(m > 0.0) || !(rho > 0.0 && rho < 1.0) {
        return Err(BarrierError::InvalidParameter(format!("need M > 0 and 0 < rho < 1, got M={m}, rho={rho}")));
    }
    Ok((1.0 + 1.0 / (2.0 * m)).ln() / -(1.0 - rho).ln())
}

/// `h_t = t(1 - ū)^{-β}` on a section, with `ū = (u - ℓ)/height` normalized
/// to vanish at the center and reach 1 on the boundary.
#[derive(Clone, Debug)]
pub struct HarnackBarrier {
    pub t: f64,
    pub beta: f64,
    pub cells: CellSet,
    /// `ū` at the section cells.
    pub normalized: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HarnackTouch {
    /// Smallest `t` with `h_t ≥ v` on the section cells.
    pub t: f64,
    pub touching_point: Vec<f64>,
    pub touching_cell: usize,
    pub r: f64,
}

pub fn harnack_barrier(u: &Potential, t: f64, beta: f64, s1: &SectionSet) -> Result<HarnackBarrier, BarrierError> {
    if !(beta > 0.0) || !(t >= 0.0) {
        return Err(BarrierError::InvalidParameter(format!("need beta > 0, t >= 0, got beta={beta}, t={t}")));
    }
    let normalized: Vec<f64> = s1.cells.iter().map(|c| s1.tilt.bracket_node(u, c) / s1.height).collect();
    if let Some(&bad) = normalized.iter().find(|&&x| !(x < 1.0)) {
        return Err(BarrierError::Degenerate(bad));
    }
    let values = normalized.iter().map(|x| t * (1.0 - x).powf(-beta)).collect();
    Ok(HarnackBarrier { t, beta, cells: s1.cells.clone(), normalized, values })
}

impl HarnackBarrier {
    /// Minimal `t` with `h_t ≥ v`, attained where `v (1-ū)^β` is largest;
    /// ties go to the lowest cell index.
    pub fn touch(&self, v: &NodeField) -> HarnackTouch {
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (k, c) in self.cells.iter().enumerate() {
            let s = v.value(c) * (1.0 - self.normalized[k]).powf(self.beta);
            if s > best.0 {
                best = (s, k);
            }
        }
        let cell = self.cells.indices()[best.1];
        HarnackTouch {
            t: best.0.max(0.0),
            touching_point: v.grid().point(cell),
            touching_cell: cell,
            r: (1.0 - self.normalized[best.1]) / 2.0,
        }
    }
}
