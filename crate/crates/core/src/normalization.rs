//! John normalization of sections and the affine rescaling of a linearized
//! Monge-Ampère problem onto a normalized section.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GeometryError, NormalizationError};
use crate::fit::power_fit;
use crate::geometry::hull::{hull_2d, polygon_inner_distance};
use crate::geometry::linalg::{adjugate, eigenvalues, inv_sqrt_spd, operator_norm, sqrt_spd};
use crate::geometry::{lp_norm, CellSet, Grid, Potential, PotentialKind, Pullback, StructuralConstants};
use crate::sections::{section, section_with_tilt, SectionSet, Tilt};

/// `x ↦ A x + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub linear: DMatrix<f64>,
    pub shift: DVector<f64>,
    pub det: f64,
}

impl AffineMap {
    pub fn new(linear: DMatrix<f64>, shift: DVector<f64>) -> Result<Self, NormalizationError> {
        let det = linear.determinant();
        if !(det.abs() > 1e-300) || !det.is_finite() {
            return Err(NormalizationError::SingularMap(det));
        }
        Ok(AffineMap { linear, shift, det })
    }

    pub fn identity(n: usize) -> Self {
        AffineMap { linear: DMatrix::identity(n, n), shift: DVector::zeros(n), det: 1.0 }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn apply(&self, x: &[f64]) -> DVector<f64> {
        &self.linear * DVector::from_column_slice(x) + &self.shift
    }

    pub fn inverse(&self) -> AffineMap {
        let inv = self.linear.clone().try_inverse().expect("map checked invertible");
        let shift = -(&inv * &self.shift);
        AffineMap { det: 1.0 / self.det, linear: inv, shift }
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &AffineMap) -> AffineMap {
        AffineMap {
            linear: &self.linear * &other.linear,
            shift: &self.linear * &other.shift + &self.shift,
            det: self.det * other.det,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: DVector<f64>,
    /// `(x - c)ᵀ E (x - c) <= 1`.
    pub shape: DMatrix<f64>,
    pub iterations: usize,
}

/// Minimum-volume enclosing ellipsoid by Khachiyan's barycentric
/// coordinate ascent.
pub fn khachiyan_mvee(points: &[DVector<f64>], tol: f64, max_iter: usize) -> Result<Ellipsoid, NormalizationError> {
    let m = points.len();
    let d = points.first().map(|p| p.len()).unwrap_or(0);
    if m < d + 1 || d == 0 {
        return Err(NormalizationError::DegenerateSection { hull_dim: m.saturating_sub(1).min(d), dim: d });
    }
    let q: Vec<DVector<f64>> = points.iter().map(|p| p.clone().insert_row(d, 1.0)).collect();
    let mut w = vec![1.0 / m as f64; m];
    let mut iterations = 0;
    loop {
        let mut x = DMatrix::zeros(d + 1, d + 1);
        for (qi, wi) in q.iter().zip(&w) {
            x += qi * qi.transpose() * *wi;
        }
        let xinv = x.try_inverse().ok_or(NormalizationError::DegenerateSection { hull_dim: d - 1, dim: d })?;
        let (j, mj) = q
            .iter()
            .map(|qi| (qi.transpose() * &xinv * qi)[(0, 0)])
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (i, v)| if v > b.1 { (i, v) } else { b });
        let step = (mj - d as f64 - 1.0) / ((d as f64 + 1.0) * (mj - 1.0));
        let mut change = 0.0;
        for (i, wi) in w.iter_mut().enumerate() {
            let new = (1.0 - step) * *wi + if i == j { step } else { 0.0 };
            change += (new - *wi) * (new - *wi);
            *wi = new;
        }
        iterations += 1;
        if change.sqrt() < tol || iterations >= max_iter {
            break;
        }
    }
    let mut center = DVector::zeros(d);
    for (p, wi) in points.iter().zip(&w) {
        center += p * *wi;
    }
    let mut cov = DMatrix::zeros(d, d);
    for (p, wi) in points.iter().zip(&w) {
        cov += p * p.transpose() * *wi;
    }
    cov -= &center * center.transpose();
    let shape = cov
        .try_inverse()
        .ok_or(NormalizationError::DegenerateSection { hull_dim: d - 1, dim: d })?
        / d as f64;
    Ok(Ellipsoid { center, shape, iterations })
}

/// Extreme member points used for the enclosing ellipsoid: the two end
/// points in 1-D, hull vertices in 2-D, the boundary layer in 3-D.
fn extreme_points(grid: &Grid, cells: &CellSet) -> Vec<DVector<f64>> {
    match grid.dim() {
        1 => {
            let xs: Vec<f64> = cells.iter().map(|c| grid.point(c)[0]).collect();
            let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            vec![DVector::from_vec(vec![lo]), DVector::from_vec(vec![hi])]
        }
        2 => {
            let pts: Vec<[f64; 2]> = cells.inner_layer(grid).iter().map(|c| {
                let p = grid.point(c);
                [p[0], p[1]]
            }).collect();
            hull_2d(&pts).into_iter().map(|p| DVector::from_vec(p.to_vec())).collect()
        }
        _ => cells.inner_layer(grid).iter().map(|c| DVector::from_vec(grid.point(c))).collect(),
    }
}

/// Affine map `N` with `B_1 ⊂ N(S) ⊂ B_n` (each up to one grid cell).
///
/// The enclosing ellipsoid of the member nodes is mapped to the unit ball,
/// then the image is scaled so its inradius about the origin is one. John's
/// lemma bounds the resulting outer radius by `n`.
pub fn john_normalize(grid: &Grid, s: &SectionSet) -> Result<AffineMap, NormalizationError> {
    let n = grid.dim();
    let pts = extreme_points(grid, &s.cells);
    if s.cells.len() < n + 1 {
        return Err(NormalizationError::DegenerateSection { hull_dim: s.cells.len().saturating_sub(1), dim: n });
    }
    // Reject flat point clouds before the ellipsoid solve.
    let mean = pts.iter().fold(DVector::zeros(n), |a, p| a + p) / pts.len() as f64;
    let cov = pts.iter().fold(DMatrix::zeros(n, n), |a, p| a + (p - &mean) * (p - &mean).transpose());
    let ev = eigenvalues(&cov);
    let rank = ev.iter().filter(|&&e| e > 1e-12 * ev.max().max(1e-300)).count();
    if rank < n {
        return Err(NormalizationError::DegenerateSection { hull_dim: rank, dim: n });
    }
    let ell = khachiyan_mvee(&pts, 1e-6, 100_000)?;
    let l = sqrt_spd(&ell.shape);
    let t0 = AffineMap::new(l.clone(), -(&l * &ell.center))?;

    let inradius = match n {
        1 => {
            let a = t0.apply(pts[0].as_slice())[0];
            let b = t0.apply(pts[1].as_slice())[0];
            a.abs().min(b.abs())
        }
        2 => {
            let mapped: Vec<[f64; 2]> = pts
                .iter()
                .map(|p| {
                    let q = t0.apply(p.as_slice());
                    [q[0], q[1]]
                })
                .collect();
            polygon_inner_distance(&hull_2d(&mapped), &[0.0, 0.0])
        }
        _ => pts.iter().map(|p| t0.apply(p.as_slice()).norm()).fold(f64::INFINITY, f64::min),
    };
    if !(inradius > 0.0) {
        return Err(NormalizationError::DegenerateSection { hull_dim: n - 1, dim: n });
    }
    let scale = 1.0 / inradius;
    AffineMap::new(&t0.linear * scale, &t0.shift * scale)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedBounds {
    /// Smallest norm of a mapped non-member node next to the section.
    pub inner_radius: f64,
    /// Largest norm of a mapped member node.
    pub outer_radius: f64,
    /// Largest mapped cell diagonal, the one-cell tolerance.
    pub cell_tolerance: f64,
}

impl NormalizedBounds {
    pub fn holds(&self, n: usize) -> bool {
        self.inner_radius >= 1.0 - self.cell_tolerance && self.outer_radius <= n as f64 + self.cell_tolerance
    }
}

/// Measures how well `map(S)` sits between `B_1` and `B_n`.
pub fn normalized_bounds(grid: &Grid, s: &SectionSet, map: &AffineMap) -> NormalizedBounds {
    let outer_radius = s.cells.iter().map(|c| map.apply(&grid.point(c)).norm()).fold(0.0, f64::max);
    let inner_radius = s.boundary.iter().map(|c| map.apply(&grid.point(c)).norm()).fold(f64::INFINITY, f64::min);
    let diag = DVector::from_column_slice(grid.spacing());
    let cell_tolerance = operator_norm(&map.linear) * diag.norm();
    NormalizedBounds { inner_radius, outer_radius, cell_tolerance }
}

pub type MatrixField = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;
pub type VectorField = Arc<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>;
pub type ScalarField = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Coefficient matrix models satisfying `λ̃ U <= A <= Λ̃ U` by construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CoefficientModel {
    /// `A = scale · U`.
    Cofactor { scale: f64 },
    /// `A = U^{1/2} M U^{1/2}` with
    /// `M = Λ̃ I - (Λ̃ - λ̃) (x - c)(x - c)ᵀ / (|x - c|^2 + η^2)`.
    RadialPucci { center: Vec<f64>, eta: f64 },
}

/// Operator data `a^{ij} v_ij + b·Dv + c v = f` bound to a potential and a
/// section.
#[derive(Clone)]
pub struct ProblemInstance {
    pub potential: Arc<Potential>,
    pub section: SectionSet,
    pub constants: StructuralConstants,
    pub a: MatrixField,
    pub b: VectorField,
    pub c: ScalarField,
    pub f: ScalarField,
}

impl fmt::Debug for ProblemInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemInstance")
            .field("potential", &self.potential.name())
            .field("section_height", &self.section.height)
            .field("constants", &self.constants)
            .finish()
    }
}

/// Cofactor matrix of `D^2 u` at an arbitrary point.
pub fn cofactor_at(u: &Potential, x: &[f64]) -> DMatrix<f64> {
    adjugate(&u.hessian_at(x))
}

impl ProblemInstance {
    /// Instance with coefficient model `model`, zero drift, zero-order term
    /// and right-hand side.
    pub fn new(
        potential: Arc<Potential>,
        section: SectionSet,
        constants: StructuralConstants,
        model: &CoefficientModel,
    ) -> Self {
        let n = potential.dim();
        let u = potential.clone();
        let (lt, bt) = (constants.lambda_tilde, constants.big_lambda_tilde);
        let a: MatrixField = match model.clone() {
            CoefficientModel::Cofactor { scale } => Arc::new(move |x| cofactor_at(&u, x) * scale),
            CoefficientModel::RadialPucci { center, eta } => Arc::new(move |x| {
                let d = DVector::from_column_slice(x) - DVector::from_column_slice(&center);
                let m = DMatrix::identity(n, n) * bt - &d * d.transpose() * ((bt - lt) / (d.norm_squared() + eta * eta));
                let us = sqrt_spd(&cofactor_at(&u, x));
                &us * m * &us
            }),
        };
        ProblemInstance {
            potential,
            section,
            constants,
            a,
            b: Arc::new(move |_| DVector::zeros(n)),
            c: Arc::new(|_| 0.0),
            f: Arc::new(|_| 0.0),
        }
    }

    pub fn with_drift(mut self, b: VectorField) -> Self {
        self.b = b;
        self
    }

    pub fn with_zero_order(mut self, c: ScalarField) -> Self {
        self.c = c;
        self
    }

    pub fn with_rhs(mut self, f: ScalarField) -> Self {
        self.f = f;
        self
    }

    pub fn dim(&self) -> usize {
        self.potential.dim()
    }

    pub fn grid(&self) -> &Grid {
        self.potential.grid()
    }

    /// Eigenvalue range of `U^{-1/2} A U^{-1/2}` over section cells.
    pub fn envelope(&self) -> EnvelopeReport {
        let grid = self.grid();
        let (lo, hi) = self
            .section
            .cells
            .indices()
            .par_iter()
            .map(|&c| {
                let p = grid.point(c);
                let ui = inv_sqrt_spd(&adjugate(&self.potential.hessian(c)));
                let ev = eigenvalues(&(&ui * (self.a)(&p) * &ui));
                (ev.min(), ev.max())
            })
            .reduce(|| (f64::INFINITY, f64::NEG_INFINITY), |a, b| (a.0.min(b.0), a.1.max(b.1)));
        EnvelopeReport { min_eigenvalue: lo, max_eigenvalue: hi }
    }

    pub fn envelope_holds(&self, tol: f64) -> bool {
        let e = self.envelope();
        e.min_eigenvalue >= self.constants.lambda_tilde * (1.0 - tol)
            && e.max_eigenvalue <= self.constants.big_lambda_tilde * (1.0 + tol)
    }

    /// `‖b‖_{L^p}`, `‖b‖_{L^n}`, `‖c‖_{L^n}`, `‖f‖_{L^n}` over the section.
    pub fn norms(&self) -> NormReport {
        let grid = self.grid();
        let n = self.dim() as f64;
        let cells = &self.section.cells;
        let pt = |c: usize| grid.point(c);
        NormReport {
            b_lp: lp_norm(grid, cells, self.constants.p, |c| (self.b)(&pt(c)).norm()),
            b_ln: lp_norm(grid, cells, n, |c| (self.b)(&pt(c)).norm()),
            c_ln: lp_norm(grid, cells, n, |c| (self.c)(&pt(c))),
            f_ln: lp_norm(grid, cells, n, |c| (self.f)(&pt(c))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub b_lp: f64,
    pub b_ln: f64,
    pub c_ln: f64,
    pub f_ln: f64,
}

/// A node field with interleaved components and multilinear interpolation.
#[derive(Clone, Debug)]
pub struct SampledField {
    pub grid: Grid,
    pub comps: usize,
    pub data: Vec<f64>,
}

impl SampledField {
    pub fn sample<F: Fn(&[f64], &mut [f64]) + Sync>(grid: &Grid, comps: usize, f: F) -> Self {
        let data: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .flat_map_iter(|i| {
                let mut out = vec![0.0; comps];
                f(&grid.point(i), &mut out);
                out
            })
            .collect();
        SampledField { grid: grid.clone(), comps, data }
    }

    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        self.grid.interpolate(&self.data, self.comps, x, out);
    }

    /// Multilinear interpolation error bound `(1/8) Σ h_i^2 max |∂_ii g|`,
    /// with second derivatives from central differences, maximized over
    /// components.
    pub fn interpolation_tolerance(&self) -> f64 {
        let g = &self.grid;
        let n = g.dim();
        let mut worst = 0.0f64;
        for comp in 0..self.comps {
            let mut total = 0.0;
            for k in 0..n {
                let h = g.spacing()[k];
                let mut m = 0.0f64;
                for i in 0..g.len() {
                    if let (Some(a), Some(b)) = (g.offset(i, k, -1), g.offset(i, k, 1)) {
                        let d2 = (self.data[a * self.comps + comp] - 2.0 * self.data[i * self.comps + comp]
                            + self.data[b * self.comps + comp])
                            / (h * h);
                        m = m.max(d2.abs());
                    }
                }
                total += h * h * m;
            }
            worst = worst.max(total / 8.0);
        }
        worst
    }
}

/// A problem rescaled onto a normalized section.
#[derive(Clone, Debug)]
pub struct RescaledInstance {
    /// `T x = A_h x + b_h`, mapping normalized coordinates to original ones.
    pub map: AffineMap,
    pub instance: ProblemInstance,
    pub norm_report: NormReport,
    /// `(det A_h)^{2/n}`.
    pub scale: f64,
    pub fields: RescaledFields,
}

/// Sampled pullbacks backing the rescaled closures.
#[derive(Clone, Debug)]
pub struct RescaledFields {
    pub a: Arc<SampledField>,
    pub b: Arc<SampledField>,
    pub c: Arc<SampledField>,
    pub f: Arc<SampledField>,
}

/// Rescales `p` under `t`, producing `ũ = (det A_h)^{-2/n} u(T x)`,
/// `Ã = (det A_h)^{2/n} A_h^{-1} A(T x) A_h^{-ᵀ}`,
/// `b̃ = (det A_h)^{2/n} A_h^{-1} b(T x)`, `c̃ = (det A_h)^{2/n} c(T x)` and
/// `f̃ = (det A_h)^{2/n} f(T x)` on `grid` (the normalized-coordinate grid).
/// Coefficient fields are sampled at grid nodes and interpolated.
pub fn rescale_problem(p: &ProblemInstance, t: &AffineMap, grid: &Grid) -> Result<RescaledInstance, NormalizationError> {
    let n = p.dim();
    if t.dim() != n || grid.dim() != n {
        return Err(GeometryError::DimensionMismatch { expected: n, got: t.dim() }.into());
    }
    if !(t.det.abs() > 1e-300) {
        return Err(NormalizationError::SingularMap(t.det));
    }
    let det_a = t.det.abs();
    let scale = det_a.powf(2.0 / n as f64);
    let ainv = t.linear.clone().try_inverse().ok_or(NormalizationError::SingularMap(t.det))?;

    let u = &p.potential;
    let potential = match (u.kind(), u.analytic_fn()) {
        (PotentialKind::Analytic, Some(f)) => Potential::analytic(
            grid.clone(),
            Arc::new(Pullback::new(f.clone(), t.linear.clone(), t.shift.clone(), 1.0 / scale)),
        )?,
        _ => {
            let len = grid.len();
            let mut values = Vec::with_capacity(len);
            let mut grads = Vec::with_capacity(len * n);
            let mut hess = Vec::with_capacity(len * n * n);
            let at = t.linear.transpose();
            for i in 0..len {
                let y = t.apply(&grid.point(i));
                values.push(u.value_at(y.as_slice()) / scale);
                grads.extend((&at * u.gradient_at(y.as_slice()) / scale).iter());
                hess.extend((&at * u.hessian_at(y.as_slice()) * &t.linear / scale).iter());
            }
            Potential::from_caches(grid.clone(), values, grads, hess, format!("rescaled({})", u.name()))?
        }
    };
    let potential = Arc::new(potential);

    let x0 = t.inverse().apply(p.section.center());
    let tilt = Tilt::at_point(&potential, x0.as_slice())?;
    let section = section_with_tilt(&potential, tilt, p.section.height / scale)?;

    let (pa, pb, pc, pf) = (p.a.clone(), p.b.clone(), p.c.clone(), p.f.clone());
    let (tt, ai) = (t.clone(), ainv.clone());
    let fa = Arc::new(SampledField::sample(grid, n * n, move |x, out| {
        let y = tt.apply(x);
        let m = &ai * pa(y.as_slice()) * ai.transpose() * scale;
        out.copy_from_slice(m.as_slice());
    }));
    let (tt, ai) = (t.clone(), ainv.clone());
    let fb = Arc::new(SampledField::sample(grid, n, move |x, out| {
        let y = tt.apply(x);
        out.copy_from_slice((&ai * pb(y.as_slice()) * scale).as_slice());
    }));
    let tt = t.clone();
    let fc = Arc::new(SampledField::sample(grid, 1, move |x, out| out[0] = scale * pc(tt.apply(x).as_slice())));
    let tt = t.clone();
    let ff = Arc::new(SampledField::sample(grid, 1, move |x, out| out[0] = scale * pf(tt.apply(x).as_slice())));

    let a: MatrixField = {
        let fa = fa.clone();
        Arc::new(move |x| {
            let mut out = vec![0.0; n * n];
            fa.eval(x, &mut out);
            DMatrix::from_vec(n, n, out)
        })
    };
    let b: VectorField = {
        let fb = fb.clone();
        Arc::new(move |x| {
            let mut out = vec![0.0; n];
            fb.eval(x, &mut out);
            DVector::from_vec(out)
        })
    };
    let c: ScalarField = {
        let fc = fc.clone();
        Arc::new(move |x| {
            let mut o = [0.0];
            fc.eval(x, &mut o);
            o[0]
        })
    };
    let f: ScalarField = {
        let ff = ff.clone();
        Arc::new(move |x| {
            let mut o = [0.0];
            ff.eval(x, &mut o);
            o[0]
        })
    };
    let instance = ProblemInstance { potential, section, constants: p.constants, a, b, c, f };
    let norm_report = instance.norms();
    Ok(RescaledInstance {
        map: t.clone(),
        instance,
        norm_report,
        scale,
        fields: RescaledFields { a: fa, b: fb, c: fc, f: ff },
    })
}

/// Grid for normalized coordinates: `[-(n + 1/2), n + 1/2]^n`.
pub fn normalized_grid(dim: usize, nodes: usize) -> Result<Grid, GeometryError> {
    Grid::centered(dim, dim as f64 + 0.5, nodes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescaleChecks {
    /// Max cellwise `‖Ũ - (det A_h)^{2/n} A_h^{-1} U(Tx) A_h^{-ᵀ}‖`.
    pub cofactor_residual: f64,
    /// `det D^2 ũ` range over the normalized section.
    pub det_min: f64,
    pub det_max: f64,
    /// Direct quadrature of `‖c̃‖_{L^n(S̃)}` against `(det A_h)^{1/n} ‖c‖_{L^n(S)}`.
    pub c_norm_direct: f64,
    pub c_norm_predicted: f64,
    pub bounds: NormalizedBounds,
}

/// Cross-checks of a rescaling against the original instance.
pub fn rescale_checks(orig: &ProblemInstance, r: &RescaledInstance) -> RescaleChecks {
    let n = orig.dim();
    let grid = r.instance.grid();
    let ainv = r.map.linear.clone().try_inverse().expect("invertible map");
    let u = &r.instance.potential;
    let cells = &r.instance.section.cells;
    let (res, lo, hi) = cells
        .indices()
        .par_iter()
        .map(|&c| {
            let x = grid.point(c);
            let y = r.map.apply(&x);
            let tilde_u = adjugate(&u.hessian(c));
            let expected = &ainv * cofactor_at(&orig.potential, y.as_slice()) * ainv.transpose() * r.scale;
            let det = u.det_hessian(c);
            ((tilde_u - expected).amax(), det, det)
        })
        .reduce(|| (0.0, f64::INFINITY, f64::NEG_INFINITY), |a, b| (a.0.max(b.0), a.1.min(b.1), a.2.max(b.2)));
    let og = orig.grid();
    let c_orig = lp_norm(og, &orig.section.cells, n as f64, |c| (orig.c)(&og.point(c)));
    RescaleChecks {
        cofactor_residual: res,
        det_min: lo,
        det_max: hi,
        c_norm_direct: r.norm_report.c_ln,
        c_norm_predicted: r.map.det.abs().powf(1.0 / n as f64) * c_orig,
        bounds: normalized_bounds(og, &orig.section, &r.map.inverse()),
    }
}

/// Interpolated `c̃` at `T⁻¹x` against `(det A_h)^{2/n} c(x)` over the
/// original section.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundTrip {
    pub max_error: f64,
    /// Multilinear interpolation bound of the sampled `c̃`.
    pub tolerance: f64,
}

pub fn zero_order_round_trip(orig: &ProblemInstance, r: &RescaledInstance) -> RoundTrip {
    let g = orig.grid();
    let inv = r.map.inverse();
    let mut out = [0.0];
    let max_error = orig
        .section
        .cells
        .iter()
        .map(|c| {
            let x = g.point(c);
            r.fields.c.eval(inv.apply(&x).as_slice(), &mut out);
            (out[0] - r.scale * (orig.c)(&x)).abs()
        })
        .fold(0.0, f64::max);
    RoundTrip { max_error, tolerance: r.fields.c.interpolation_tolerance() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetRow {
    pub height: f64,
    pub det_a: f64,
    pub ratio: f64,
    pub inverse_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetSweep {
    pub rows: Vec<DetRow>,
    pub min_ratio: f64,
    pub max_ratio: f64,
}

/// `det A_h / h^{n/2}` for the John maps of `S_u(x0, h)`.
pub fn det_ah_sweep(u: &Potential, x0: &[f64], heights: &[f64]) -> Result<DetSweep, NormalizationError> {
    let n = u.dim() as f64;
    let mut rows = Vec::with_capacity(heights.len());
    for &h in heights {
        let s = section(u, x0, h)?;
        s.require_contained()?;
        let t = john_normalize(u.grid(), &s)?.inverse();
        let det_a = t.det.abs();
        rows.push(DetRow {
            height: h,
            det_a,
            ratio: det_a / h.powf(n / 2.0),
            inverse_norm: operator_norm(&t.linear.clone().try_inverse().expect("invertible")),
        });
    }
    let min_ratio = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    let max_ratio = rows.iter().map(|r| r.ratio).fold(f64::NEG_INFINITY, f64::max);
    Ok(DetSweep { rows, min_ratio, max_ratio })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InverseNormCheck {
    /// `(h, ‖A_h^{-1}‖, C h^{-1/(1+α*)})`.
    pub rows: Vec<(f64, f64, f64)>,
    pub c_fit: f64,
    pub fitted_exponent: Option<f64>,
    pub pass: bool,
}

/// `‖A_h^{-1}‖ <= C h^{-1/(1+α*)}` with `C` calibrated at the largest
/// height and relative slack `tol` elsewhere.
pub fn inverse_norm_bound_check(rows: &[(f64, f64)], alpha_star: f64, tol: f64) -> InverseNormCheck {
    let e = -1.0 / (1.0 + alpha_star);
    let Some(&(h_cal, l_cal)) = rows.iter().max_by(|a, b| a.0.total_cmp(&b.0)) else {
        return InverseNormCheck { rows: Vec::new(), c_fit: f64::NAN, fitted_exponent: None, pass: true };
    };
    let c_fit = l_cal / h_cal.powf(e);
    let out: Vec<(f64, f64, f64)> = rows.iter().map(|&(h, l)| (h, l, c_fit * h.powf(e))).collect();
    let pass = out.iter().all(|&(_, l, r)| l <= r * (1.0 + tol));
    let (hs, ls): (Vec<f64>, Vec<f64>) = rows.iter().cloned().unzip();
    let fitted_exponent = power_fit(&hs, &ls, 2).ok().map(|f| f.slope);
    InverseNormCheck { rows: out, c_fit, fitted_exponent, pass }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{QuadraticForm, RadialPotential, SharedFunction};

    fn pot(f: SharedFunction, hw: f64, nodes: usize) -> Arc<Potential> {
        Arc::new(Potential::analytic(Grid::centered(f.dim(), hw, nodes).unwrap(), f).unwrap())
    }

    fn consts() -> StructuralConstants {
        StructuralConstants { lambda: 1.0, big_lambda: 1.0, lambda_tilde: 1.0, big_lambda_tilde: 2.0, p: 4.0 }
    }

    #[test]
    fn affine_inverse_round_trip() {
        let m = AffineMap::new(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, -0.1, 0.5]),
            DVector::from_vec(vec![0.1, -0.2]),
        )
        .unwrap();
        let x = [0.7, -0.4];
        let back = m.inverse().apply(m.apply(&x).as_slice());
        assert!((back - DVector::from_column_slice(&x)).amax() < 1e-10);
        assert!(AffineMap::new(DMatrix::zeros(2, 2), DVector::zeros(2)).is_err());
    }

    #[test]
    fn mvee_of_square_is_circumscribed_disk() {
        let pts: Vec<DVector<f64>> = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]]
            .iter()
            .map(|p| DVector::from_vec(p.to_vec()))
            .collect();
        let e = khachiyan_mvee(&pts, 1e-9, 10_000).unwrap();
        assert!(e.center.amax() < 1e-9);
        assert!((e.shape.clone() - DMatrix::identity(2, 2) * 0.5).amax() < 1e-6);
    }

    #[test]
    fn ball_normalizes_to_identity() {
        let u = pot(Arc::new(QuadraticForm::identity(2)), 1.5, 241);
        let s = section(&u, &[0.0, 0.0], 0.5).unwrap();
        let m = john_normalize(u.grid(), &s).unwrap();
        // Up to rotation: N^T N = I.
        let g = m.linear.transpose() * &m.linear;
        assert!((g - DMatrix::identity(2, 2)).amax() < 0.03);
        assert!(normalized_bounds(u.grid(), &s, &m).holds(2));
    }

    #[test]
    fn square_normalizes_to_identity() {
        let grid = Grid::centered(2, 1.5, 121).unwrap();
        let cells = CellSet::from_mask(
            &(0..grid.len()).map(|i| grid.point(i).iter().all(|v| v.abs() <= 1.0 + 1e-9)).collect::<Vec<_>>(),
        );
        let u = Potential::analytic(grid.clone(), Arc::new(QuadraticForm::identity(2))).unwrap();
        let mut s = section(&u, &[0.0, 0.0], 0.1).unwrap();
        s.boundary = cells.outer_ring(&grid);
        s.cells = cells;
        let m = john_normalize(&grid, &s).unwrap();
        assert!((m.linear.clone() - DMatrix::identity(2, 2)).amax() < 1e-3, "{}", m.linear);
        assert!(m.shift.amax() < 1e-6);
        assert!(normalized_bounds(&grid, &s, &m).holds(2));
    }

    #[test]
    fn eccentric_ellipse_normalizes_to_diagonal() {
        // Semi-axes (4, 1/4): u = x²/32 + 8 y², h = 1/2.
        let f: SharedFunction = Arc::new(QuadraticForm::eccentric(2, 16.0));
        let grid = Grid::new(vec![-4.5, -0.5], vec![9.0 / 400.0, 1.0 / 400.0], vec![401, 401]).unwrap();
        let u = Potential::analytic(grid.clone(), f).unwrap();
        let s = section(&u, &[0.0, 0.0], 0.5).unwrap();
        let m = john_normalize(&grid, &s).unwrap();
        let expect = DMatrix::from_diagonal(&DVector::from_vec(vec![0.25, 4.0]));
        // One cell of the short axis is 1% of its length.
        for k in 0..2 {
            assert!((m.linear[(k, k)] / expect[(k, k)] - 1.0).abs() < 0.02, "{}", m.linear);
        }
        assert!(normalized_bounds(&grid, &s, &m).holds(2));
    }

    #[test]
    fn degenerate_section_is_rejected() {
        let u = pot(Arc::new(QuadraticForm::identity(2)), 1.0, 11);
        let mut s = section(&u, &[0.0, 0.0], 0.5).unwrap();
        s.cells = CellSet::from_unsorted(vec![u.grid().index(&[5, 5, 0]), u.grid().index(&[5, 6, 0])]);
        assert!(matches!(john_normalize(u.grid(), &s), Err(NormalizationError::DegenerateSection { .. })));
    }

    #[test]
    fn identity_rescale_keeps_fields() {
        let u = pot(Arc::new(QuadraticForm::identity(2)), 2.5, 101);
        let s = section(&u, &[0.0, 0.0], 0.5).unwrap();
        let p = ProblemInstance::new(u.clone(), s, consts(), &CoefficientModel::Cofactor { scale: 1.5 })
            .with_zero_order(Arc::new(|x: &[f64]| 1.0 + x[0]));
        let r = rescale_problem(&p, &AffineMap::identity(2), u.grid()).unwrap();
        assert_eq!(r.scale, 1.0);
        let before = p.norms();
        assert!((r.norm_report.c_ln - before.c_ln).abs() < 1e-12);
        assert_eq!(r.instance.section.cells, p.section.cells);
    }

    #[test]
    fn john_map_rescales_eccentric_quadratic_to_ball() {
        let u = pot(Arc::new(QuadraticForm::eccentric(2, 4.0)), 2.5, 301);
        let s = section(&u, &[0.0, 0.0], 0.5).unwrap();
        let t = john_normalize(u.grid(), &s).unwrap().inverse();
        let p = ProblemInstance::new(u.clone(), s, consts(), &CoefficientModel::Cofactor { scale: 1.0 });
        let r = rescale_problem(&p, &t, &normalized_grid(2, 121).unwrap()).unwrap();
        let ut = &r.instance.potential;
        for c in r.instance.section.cells.iter().step_by(17) {
            let h = ut.hessian(c);
            // ũ is |x|²/2 up to rotation and the John map's cell-level error.
            assert!((h.clone() - DMatrix::identity(2, 2)).amax() < 0.03, "{h}");
            assert!((adjugate(&h) - DMatrix::identity(2, 2)).amax() < 0.03);
        }
        let ck = rescale_checks(&p, &r);
        assert!(ck.cofactor_residual < 1e-10);
        assert!((ck.det_min - 1.0).abs() < 1e-10 && (ck.det_max - 1.0).abs() < 1e-10);
        assert!(r.instance.envelope_holds(1e-9));
    }

    #[test]
    fn c_norm_follows_change_of_variables() {
        let u = pot(Arc::new(RadialPotential::new(2, 1.0, 0.5)), 2.0, 201);
        let s = section(&u, &[0.1, 0.0], 0.3).unwrap();
        let t = john_normalize(u.grid(), &s).unwrap().inverse();
        let p = ProblemInstance::new(u.clone(), s, consts(), &CoefficientModel::Cofactor { scale: 1.0 })
            .with_zero_order(Arc::new(|x: &[f64]| 2.0 + x[0] * x[1]));
        let r = rescale_problem(&p, &t, &normalized_grid(2, 161).unwrap()).unwrap();
        let ck = rescale_checks(&p, &r);
        assert!((ck.c_norm_direct / ck.c_norm_predicted - 1.0).abs() < 0.01, "{ck:?}");
    }

    #[test]
    fn one_dimensional_det_ratio() {
        let u = pot(Arc::new(QuadraticForm::identity(1)), 1.0, 2001);
        let sw = det_ah_sweep(&u, &[0.0], &[0.05, 0.1, 0.2]).unwrap();
        for r in &sw.rows {
            assert!((r.ratio - 2f64.sqrt()).abs() < 0.01, "{r:?}");
        }
    }

    #[test]
    fn inverse_norm_exponent_for_quadratic() {
        let u = pot(Arc::new(QuadraticForm::eccentric(2, 2.0)), 1.5, 301);
        let hs = [0.05, 0.1, 0.2, 0.4];
        let sw = det_ah_sweep(&u, &[0.0, 0.0], &hs).unwrap();
        let rows: Vec<(f64, f64)> = sw.rows.iter().map(|r| (r.height, r.inverse_norm)).collect();
        let ck = inverse_norm_bound_check(&rows, 1.0, 0.05);
        assert!(ck.pass, "{ck:?}");
        let e = ck.fitted_exponent.unwrap();
        assert!((-0.55..=-0.45).contains(&e), "{e}");
        assert!(inverse_norm_bound_check(&rows[..1], 1.0, 0.0).pass);
        assert!(sw.max_ratio / sw.min_ratio < 1.1);
    }

    #[test]
    fn pucci_model_respects_envelope() {
        let u = pot(Arc::new(RadialPotential::new(2, 1.0, 1.0)), 1.5, 81);
        let s = section(&u, &[0.0, 0.0], 0.4).unwrap();
        let p = ProblemInstance::new(
            u,
            s,
            consts(),
            &CoefficientModel::RadialPucci { center: vec![0.0, 0.0], eta: 0.1 },
        );
        let e = p.envelope();
        assert!(e.min_eigenvalue >= 1.0 - 1e-9 && e.max_eigenvalue <= 2.0 + 1e-9, "{e:?}");
    }
}
