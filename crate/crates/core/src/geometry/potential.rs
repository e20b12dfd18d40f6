//! Convex potentials on a grid with cached derivatives.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::families::SharedFunction;
use super::grid::Grid;
use super::linalg;
use crate::error::GeometryError;

/// Width in cells of the boundary collar where one-sided stencils are used.
pub const STENCIL_COLLAR: usize = 2;

/// Relative margin folded into a densely evaluated pinching certificate.
pub const DENSE_PINCHING_MARGIN: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PotentialKind {
    Analytic,
    Sampled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stencil {
    Exact,
    Central,
    OneSided,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Certification {
    ClosedForm,
    Dense { margin: f64 },
}

/// Certified bounds `lambda <= det D^2 u <= big_lambda` over the grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pinching {
    pub lambda: f64,
    pub big_lambda: f64,
    pub certification: Certification,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Derivatives {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub stencil: Stencil,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub min_eigenvalue: f64,
    pub violations: usize,
    pub worst_point: Vec<f64>,
    pub tolerance: f64,
}

impl ConvexityReport {
    pub fn is_convex(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Clone, Debug)]
pub struct Potential {
    grid: Grid,
    kind: PotentialKind,
    analytic: Option<SharedFunction>,
    name: String,
    values: Vec<f64>,
    gradients: Vec<f64>,
    hessians: Vec<f64>,
    one_sided: Vec<bool>,
    pinching: Pinching,
}

impl Potential {
    /// Potential backed by a closed-form function; node caches hold exact
    /// derivatives.
    pub fn analytic(grid: Grid, f: SharedFunction) -> Result<Self, GeometryError> {
        let n = grid.dim();
        if f.dim() != n {
            return Err(GeometryError::DimensionMismatch { expected: n, got: f.dim() });
        }
        let nodes: Vec<(f64, DVector<f64>, DMatrix<f64>)> = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let p = grid.point(i);
                (f.value(&p), f.gradient(&p), f.hessian(&p))
            })
            .collect();
        let mut values = Vec::with_capacity(grid.len());
        let mut gradients = Vec::with_capacity(grid.len() * n);
        let mut hessians = Vec::with_capacity(grid.len() * n * n);
        for (v, g, h) in &nodes {
            values.push(*v);
            gradients.extend(g.iter());
            hessians.extend(h.iter());
        }
        let pinching = match f.det_bounds(grid.origin(), &grid.upper()) {
            Some((lo, hi)) => Pinching { lambda: lo, big_lambda: hi, certification: Certification::ClosedForm },
            None => dense_pinching(n, &hessians),
        };
        let one_sided = vec![false; grid.len()];
        Ok(Potential {
            name: f.name(),
            grid,
            kind: PotentialKind::Analytic,
            analytic: Some(f),
            values,
            gradients,
            hessians,
            one_sided,
            pinching,
        })
    }

    /// Potential known only through node values; derivatives come from
    /// second-order finite differences.
    pub fn sampled(grid: Grid, values: Vec<f64>, name: impl Into<String>) -> Result<Self, GeometryError> {
        if values.len() != grid.len() {
            return Err(GeometryError::DimensionMismatch { expected: grid.len(), got: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidParameter(format!(
                "non-finite sample at {:?}",
                grid.point(i)
            )));
        }
        let n = grid.dim();
        let gradients = fd_gradients(&grid, &values);
        let hessians = fd_hessians(&grid, &values, &gradients);
        let one_sided = (0..grid.len()).map(|i| grid.edge_distance(i) < STENCIL_COLLAR).collect();
        let pinching = dense_pinching(n, &hessians);
        Ok(Potential {
            grid,
            kind: PotentialKind::Sampled,
            analytic: None,
            name: name.into(),
            values,
            gradients,
            hessians,
            one_sided,
            pinching,
        })
    }

    /// Potential from precomputed node values and derivatives (gradients
    /// `n` per node, Hessians `n*n` per node, symmetric).
    pub fn from_caches(
        grid: Grid,
        values: Vec<f64>,
        gradients: Vec<f64>,
        hessians: Vec<f64>,
        name: impl Into<String>,
    ) -> Result<Self, GeometryError> {
        let n = grid.dim();
        let len = grid.len();
        if values.len() != len || gradients.len() != len * n || hessians.len() != len * n * n {
            return Err(GeometryError::DimensionMismatch { expected: len, got: values.len() });
        }
        let pinching = dense_pinching(n, &hessians);
        let one_sided = vec![false; len];
        Ok(Potential {
            grid,
            kind: PotentialKind::Sampled,
            analytic: None,
            name: name.into(),
            values,
            gradients,
            hessians,
            one_sided,
            pinching,
        })
    }

    /// Samples `f` on the grid and forgets the closed form.
    pub fn sampled_from(grid: Grid, f: &SharedFunction) -> Result<Self, GeometryError> {
        let values = grid.sample(|p| f.value(p));
        Potential::sampled(grid, values, format!("sampled({})", f.name()))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn kind(&self) -> PotentialKind {
        self.kind
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn analytic_fn(&self) -> Option<&SharedFunction> {
        self.analytic.as_ref()
    }

    pub fn pinching(&self) -> Pinching {
        self.pinching
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn gradients(&self) -> &[f64] {
        &self.gradients
    }

    pub fn hessians(&self) -> &[f64] {
        &self.hessians
    }

    pub fn value(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    pub fn gradient(&self, idx: usize) -> &[f64] {
        let n = self.dim();
        &self.gradients[idx * n..(idx + 1) * n]
    }

    pub fn gradient_vec(&self, idx: usize) -> DVector<f64> {
        DVector::from_column_slice(self.gradient(idx))
    }

    pub fn hessian(&self, idx: usize) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_column_slice(n, n, &self.hessians[idx * n * n..(idx + 1) * n * n])
    }

    pub fn det_hessian(&self, idx: usize) -> f64 {
        self.hessian(idx).determinant()
    }

    pub fn is_one_sided(&self, idx: usize) -> bool {
        self.one_sided[idx]
    }

    /// Derivatives at a node.
    pub fn node_derivatives(&self, idx: usize) -> Derivatives {
        let stencil = match self.kind {
            PotentialKind::Analytic => Stencil::Exact,
            PotentialKind::Sampled if self.one_sided[idx] => Stencil::OneSided,
            PotentialKind::Sampled => Stencil::Central,
        };
        Derivatives {
            value: self.values[idx],
            gradient: self.gradient_vec(idx),
            hessian: self.hessian(idx),
            stencil,
        }
    }

    /// `(u, Du, D^2 u)` at an arbitrary point of the grid box. Analytic
    /// potentials are evaluated exactly; sampled ones interpolate node caches.
    pub fn eval_derivatives(&self, x: &[f64]) -> Result<Derivatives, GeometryError> {
        if x.len() != self.dim() {
            return Err(GeometryError::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        if !self.grid.contains_point(x) {
            return Err(GeometryError::OutOfDomain(x.to_vec()));
        }
        if let Some(f) = &self.analytic {
            return Ok(Derivatives {
                value: f.value(x),
                gradient: f.gradient(x),
                hessian: f.hessian(x),
                stencil: Stencil::Exact,
            });
        }
        let n = self.dim();
        let value = self.grid.interpolate_scalar(&self.values, x);
        let mut g = vec![0.0; n];
        self.grid.interpolate(&self.gradients, n, x, &mut g);
        let mut h = vec![0.0; n * n];
        self.grid.interpolate(&self.hessians, n * n, x, &mut h);
        let near = self.grid.nearest(x).expect("point checked inside");
        let stencil = if self.one_sided[near] {
            log::debug!("one-sided stencil used near {x:?}");
            Stencil::OneSided
        } else {
            Stencil::Central
        };
        Ok(Derivatives {
            value,
            gradient: DVector::from_vec(g),
            hessian: DMatrix::from_vec(n, n, h),
            stencil,
        })
    }

    pub fn value_at(&self, x: &[f64]) -> f64 {
        match &self.analytic {
            Some(f) => f.value(x),
            None => self.grid.interpolate_scalar(&self.values, x),
        }
    }

    pub fn gradient_at(&self, x: &[f64]) -> DVector<f64> {
        match &self.analytic {
            Some(f) => f.gradient(x),
            None => {
                let n = self.dim();
                let mut g = vec![0.0; n];
                self.grid.interpolate(&self.gradients, n, x, &mut g);
                DVector::from_vec(g)
            }
        }
    }

    pub fn hessian_at(&self, x: &[f64]) -> DMatrix<f64> {
        match &self.analytic {
            Some(f) => f.hessian(x),
            None => {
                let n = self.dim();
                let mut h = vec![0.0; n * n];
                self.grid.interpolate(&self.hessians, n * n, x, &mut h);
                DMatrix::from_vec(n, n, h)
            }
        }
    }

    /// Cellwise PSD check of the Hessian at tolerance `tau`.
    pub fn check_convexity(&self, tau: f64) -> ConvexityReport {
        let evs: Vec<f64> = (0..self.grid.len())
            .into_par_iter()
            .map(|i| linalg::min_eigenvalue(&self.hessian(i)))
            .collect();
        let (worst, min_ev) = evs
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |(wi, wv), (i, &v)| if v < wv { (i, v) } else { (wi, wv) });
        ConvexityReport {
            min_eigenvalue: min_ev,
            violations: evs.iter().filter(|&&v| v < -tau).count(),
            worst_point: self.grid.point(worst),
            tolerance: tau,
        }
    }
}

fn dense_pinching(n: usize, hessians: &[f64]) -> Pinching {
    let (lo, hi) = hessians
        .par_chunks(n * n)
        .map(|h| DMatrix::from_column_slice(n, n, h).determinant())
        .fold(|| (f64::INFINITY, f64::NEG_INFINITY), |(a, b), d| (a.min(d), b.max(d)))
        .reduce(|| (f64::INFINITY, f64::NEG_INFINITY), |(a, b), (c, d)| (a.min(c), b.max(d)));
    let m = DENSE_PINCHING_MARGIN;
    Pinching {
        lambda: lo * (1.0 - m),
        big_lambda: hi * (1.0 + m),
        certification: Certification::Dense { margin: m },
    }
}

/// Second-order first derivative of `field` (stride `comps`, component `c`)
/// along `axis` at `idx`.
pub(crate) fn d1(grid: &Grid, field: &[f64], comps: usize, c: usize, idx: usize, axis: usize) -> f64 {
    let h = grid.spacing()[axis];
    let m = grid.multi_index(idx)[axis];
    let e = grid.extents()[axis];
    let at = |s: isize| field[grid.offset(idx, axis, s).expect("stencil inside grid") * comps + c];
    if m >= STENCIL_COLLAR && m + STENCIL_COLLAR < e {
        (at(1) - at(-1)) / (2.0 * h)
    } else {
        let s: isize = if m < STENCIL_COLLAR { 1 } else { -1 };
        s as f64 * (-3.0 * at(0) + 4.0 * at(s) - at(2 * s)) / (2.0 * h)
    }
}

pub(crate) fn d2(grid: &Grid, f: &[f64], idx: usize, axis: usize) -> f64 {
    let h = grid.spacing()[axis];
    let m = grid.multi_index(idx)[axis];
    let e = grid.extents()[axis];
    let at = |s: isize| f[grid.offset(idx, axis, s).expect("stencil inside grid")];
    if m >= STENCIL_COLLAR && m + STENCIL_COLLAR < e {
        (at(1) - 2.0 * at(0) + at(-1)) / (h * h)
    } else {
        let s: isize = if m < STENCIL_COLLAR { 1 } else { -1 };
        (2.0 * at(0) - 5.0 * at(s) + 4.0 * at(2 * s) - at(3 * s)) / (h * h)
    }
}

pub(crate) fn fd_gradients(grid: &Grid, values: &[f64]) -> Vec<f64> {
    let n = grid.dim();
    (0..grid.len())
        .into_par_iter()
        .flat_map_iter(|i| (0..n).map(move |k| d1(grid, values, 1, 0, i, k)))
        .collect()
}

pub(crate) fn fd_hessians(grid: &Grid, values: &[f64], gradients: &[f64]) -> Vec<f64> {
    let n = grid.dim();
    (0..grid.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut h = vec![0.0; n * n];
            for k in 0..n {
                h[k * n + k] = d2(grid, values, i, k);
                for l in (k + 1)..n {
                    let a = d1(grid, gradients, n, k, i, l);
                    let b = d1(grid, gradients, n, l, i, k);
                    let m = 0.5 * (a + b);
                    h[k * n + l] = m;
                    h[l * n + k] = m;
                }
            }
            h
        })
        .collect()
}
