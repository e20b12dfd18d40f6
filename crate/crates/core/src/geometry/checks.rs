//! Cofactor matrices and the two classical a priori checks on convex cell sets.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cells::CellSet;
use super::families::unit_ball_volume;
use super::grid::Grid;
use super::hull::{hull_2d, polygon_diameter, polygon_inner_distance};
use super::linalg::adjugate;
use super::potential::Potential;
use crate::error::GeometryError;

/// `U = (det D^2 u)(D^2 u)^{-1}` at every node.
#[derive(Clone, Debug)]
pub struct CofactorField {
    dim: usize,
    matrices: Vec<f64>,
    dets: Vec<f64>,
}

impl CofactorField {
    pub fn at(&self, idx: usize) -> DMatrix<f64> {
        let n = self.dim;
        DMatrix::from_column_slice(n, n, &self.matrices[idx * n * n..(idx + 1) * n * n])
    }

    pub fn det_hessian(&self, idx: usize) -> f64 {
        self.dets[idx]
    }

    pub fn len(&self) -> usize {
        self.dets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dets.is_empty()
    }

    /// `max_i ‖U D^2 u - det(D^2 u) I‖` over nodes.
    pub fn identity_residual(&self, u: &Potential) -> f64 {
        let n = self.dim;
        (0..self.len())
            .into_par_iter()
            .map(|i| (self.at(i) * u.hessian(i) - DMatrix::identity(n, n) * self.dets[i]).amax())
            .reduce(|| 0.0, f64::max)
    }
}

/// Cofactor field of `u`; fails where `det D^2 u < det_floor`.
pub fn cofactor(u: &Potential, det_floor: f64) -> Result<CofactorField, GeometryError> {
    let n = u.dim();
    let grid = u.grid();
    let mut matrices = Vec::with_capacity(grid.len() * n * n);
    let mut dets = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let h = u.hessian(i);
        let det = h.determinant();
        if det < det_floor {
            return Err(GeometryError::SingularHessian { det, floor: det_floor, point: grid.point(i) });
        }
        matrices.extend(adjugate(&h).iter());
        dets.push(det);
    }
    Ok(CofactorField { dim: n, matrices, dets })
}

/// Geometry of a convex cell set as seen from its member nodes.
#[derive(Clone, Debug)]
pub struct DomainShape {
    dim: usize,
    hull: Vec<[f64; 2]>,
    interval: (f64, f64),
    layer: Vec<Vec<f64>>,
}

impl DomainShape {
    pub fn new(grid: &Grid, domain: &CellSet) -> Result<Self, GeometryError> {
        let layer_cells = domain.inner_layer(grid);
        if layer_cells.is_empty() {
            return Err(GeometryError::EmptyBoundary);
        }
        let dim = grid.dim();
        let mut shape = DomainShape { dim, hull: Vec::new(), interval: (0.0, 0.0), layer: Vec::new() };
        match dim {
            1 => {
                let xs: Vec<f64> = domain.iter().map(|c| grid.point(c)[0]).collect();
                shape.interval = (
                    xs.iter().cloned().fold(f64::INFINITY, f64::min),
                    xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                );
            }
            2 => {
                let pts: Vec<[f64; 2]> = layer_cells
                    .iter()
                    .map(|c| {
                        let p = grid.point(c);
                        [p[0], p[1]]
                    })
                    .collect();
                shape.hull = hull_2d(&pts);
            }
            _ => shape.layer = layer_cells.iter().map(|c| grid.point(c)).collect(),
        }
        Ok(shape)
    }

    /// Distance from `x` to the boundary of the hull of member nodes
    /// (zero outside). In three dimensions the nearest boundary-layer node
    /// stands in for the boundary.
    pub fn boundary_distance(&self, x: &[f64]) -> f64 {
        match self.dim {
            1 => (x[0] - self.interval.0).min(self.interval.1 - x[0]).max(0.0),
            2 => polygon_inner_distance(&self.hull, x).max(0.0),
            _ => self
                .layer
                .iter()
                .map(|z| z.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
                .fold(f64::INFINITY, f64::min),
        }
    }

    pub fn diameter(&self) -> f64 {
        match self.dim {
            1 => self.interval.1 - self.interval.0,
            2 => polygon_diameter(&self.hull),
            _ => {
                let mut d: f64 = 0.0;
                for (i, a) in self.layer.iter().enumerate() {
                    for b in &self.layer[i + 1..] {
                        d = d.max(a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt());
                    }
                }
                d
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

impl EstimateCheck {
    pub fn ratio(&self) -> f64 {
        if self.rhs > 0.0 {
            self.lhs / self.rhs
        } else if self.lhs == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// `|Du(x)| <= (max_{∂Ω} u - u(x)) / dist(x, ∂Ω)` with relative slack `tau_rel`.
pub fn gradient_estimate_check(
    u: &Potential,
    domain: &CellSet,
    x: &[f64],
    tau_rel: f64,
) -> Result<EstimateCheck, GeometryError> {
    let grid = u.grid();
    let shape = DomainShape::new(grid, domain)?;
    let layer = domain.inner_layer(grid);
    let max_b = layer.iter().map(|c| u.value(c)).fold(f64::NEG_INFINITY, f64::max);
    let d = u.eval_derivatives(x)?;
    let lhs = d.gradient.norm();
    let dist = shape.boundary_distance(x);
    let rhs = if dist > 0.0 { (max_b - d.value) / dist } else { f64::INFINITY };
    Ok(EstimateCheck { lhs, rhs, pass: lhs <= rhs * (1.0 + tau_rel) + 1e-12 })
}

/// Aleksandrov maximum principle
/// `|u(x0)|^n <= C(n) diam^{n-1} dist(x0, ∂Ω) ∫_Ω det D^2 u`
/// with the relative normalization `C(n) = 1/ω_n`.
pub fn aleksandrov_check(
    u: &Potential,
    domain: &CellSet,
    x0: &[f64],
    tau_bd: f64,
) -> Result<EstimateCheck, GeometryError> {
    let grid = u.grid();
    let n = grid.dim();
    let shape = DomainShape::new(grid, domain)?;
    let layer = domain.inner_layer(grid);
    let bd = layer.iter().map(|c| u.value(c).abs()).fold(0.0, f64::max);
    if bd > tau_bd {
        return Err(GeometryError::NonzeroBoundary(bd));
    }
    let lhs = u.value_at(x0).abs().powi(n as i32);
    let integral: f64 = domain.iter().map(|c| u.det_hessian(c).max(0.0)).sum::<f64>() * grid.cell_measure();
    let rhs = shape.diameter().powi(n as i32 - 1) * shape.boundary_distance(x0) * integral
        / unit_ball_volume(n);
    Ok(EstimateCheck { lhs, rhs, pass: lhs <= rhs + 1e-12 })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::geometry::families::{AffineFunction, QuadraticForm, SharedFunction, SmoothFunction, SumFunction};

    fn disk(grid: &Grid, r: f64) -> CellSet {
        CellSet::from_mask(
            &(0..grid.len())
                .map(|i| grid.point(i).iter().map(|v| v * v).sum::<f64>() < r * r)
                .collect::<Vec<_>>(),
        )
    }

    #[test]
    fn cofactor_of_identity_and_diagonal() {
        let g = Grid::centered(2, 1.0, 9).unwrap();
        let u = Potential::analytic(g.clone(), Arc::new(QuadraticForm::identity(2))).unwrap();
        let c = cofactor(&u, 1e-6).unwrap();
        assert_eq!(c.at(3), DMatrix::identity(2, 2));
        let e = Potential::analytic(g, Arc::new(QuadraticForm::eccentric(2, 4.0))).unwrap();
        let c = cofactor(&e, 1e-6).unwrap();
        assert_eq!(c.at(0), DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 0.25])));
        assert!(c.identity_residual(&e) < 1e-12);
    }

    #[test]
    fn cofactor_rejects_flat_hessian() {
        let g = Grid::centered(2, 1.0, 9).unwrap();
        let u = Potential::analytic(g, Arc::new(QuadraticForm::scaled(2, 1e-3))).unwrap();
        assert!(matches!(cofactor(&u, 1e-3), Err(GeometryError::SingularHessian { .. })));
    }

    #[test]
    fn gradient_estimate_on_disk() {
        let g = Grid::centered(2, 1.2, 241).unwrap();
        let u = Potential::analytic(g.clone(), Arc::new(QuadraticForm::identity(2))).unwrap();
        let dom = disk(&g, 1.0);
        let at0 = gradient_estimate_check(&u, &dom, &[0.0, 0.0], 0.0).unwrap();
        assert_eq!(at0.lhs, 0.0);
        assert!((at0.rhs - 0.5).abs() < 0.02);
        let r = gradient_estimate_check(&u, &dom, &[0.5, 0.0], 0.0).unwrap();
        assert!((r.lhs - 0.5).abs() < 1e-12);
        // (0.5 - 0.125) / 0.5 on the continuous disk.
        assert!((r.rhs - 0.75).abs() < 0.02, "{}", r.rhs);
        assert!(r.pass);
    }

    #[test]
    fn gradient_estimate_random_points_on_eccentric() {
        let g = Grid::centered(2, 2.0, 161).unwrap();
        let u = Potential::analytic(g.clone(), Arc::new(QuadraticForm::eccentric(2, 4.0))).unwrap();
        let dom = CellSet::from_mask(&(0..g.len()).map(|i| u.value(i) < 0.3).collect::<Vec<_>>());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0;
        while checked < 200 {
            let x = [rng.random_range(-1.5..1.5), rng.random_range(-0.5..0.5)];
            if u.value_at(&x) >= 0.25 {
                continue;
            }
            let r = gradient_estimate_check(&u, &dom, &x, 1e-9).unwrap();
            assert!(r.pass, "{x:?}: {} > {}", r.lhs, r.rhs);
            checked += 1;
        }
    }

    fn shifted(q: QuadraticForm, h: f64) -> SharedFunction {
        let n = q.dim();
        Arc::new(SumFunction {
            terms: vec![Arc::new(q), Arc::new(AffineFunction { constant: -h, slope: DVector::zeros(n) })],
        })
    }

    #[test]
    fn aleksandrov_on_unit_disk() {
        let g = Grid::centered(2, 1.2, 121).unwrap();
        let u = Potential::analytic(g.clone(), shifted(QuadraticForm::identity(2), 0.5)).unwrap();
        let dom = disk(&g, 1.0);
        let r = aleksandrov_check(&u, &dom, &[0.0, 0.0], 0.05).unwrap();
        assert!((r.lhs - 0.25).abs() < 1e-12);
        assert!(r.pass && r.rhs.is_finite());
        // Boundary point: both sides vanish.
        let b = aleksandrov_check(&u, &dom, &[1.0, 0.0], 0.05).unwrap();
        assert_eq!(b.lhs, 0.0);
        assert_eq!(b.rhs, 0.0);
        assert!(b.pass);
    }

    #[test]
    fn aleksandrov_on_eccentric_section() {
        let h = 0.5;
        let g = Grid::centered(2, 2.5, 201).unwrap();
        let u = Potential::analytic(g.clone(), shifted(QuadraticForm::eccentric(2, 4.0), h)).unwrap();
        let dom = CellSet::from_mask(&(0..g.len()).map(|i| u.value(i) < 0.0).collect::<Vec<_>>());
        let interior = dom.difference(&dom.inner_layer(&g));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let c = interior.indices()[rng.random_range(0..interior.len())];
            let r = aleksandrov_check(&u, &dom, &g.point(c), 0.05).unwrap();
            assert!(r.pass, "ratio {}", r.ratio());
        }
    }

    #[test]
    fn aleksandrov_rejects_nonzero_boundary() {
        let g = Grid::centered(2, 1.2, 61).unwrap();
        let u = Potential::analytic(g.clone(), Arc::new(QuadraticForm::identity(2))).unwrap();
        let dom = disk(&g, 1.0);
        assert!(matches!(aleksandrov_check(&u, &dom, &[0.0, 0.0], 0.05), Err(GeometryError::NonzeroBoundary(_))));
    }
}
