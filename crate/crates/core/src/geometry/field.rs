//! Scalar node fields with cached first and second derivatives.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::families::SharedFunction;
use super::grid::Grid;
use super::potential::{fd_gradients, fd_hessians};
use crate::error::GeometryError;

/// A C² scalar field on a grid. Unlike [`super::Potential`] no convexity is
/// assumed.
#[derive(Clone, Debug)]
pub struct NodeField {
    grid: Grid,
    name: String,
    analytic: Option<SharedFunction>,
    values: Vec<f64>,
    gradients: Vec<f64>,
    hessians: Vec<f64>,
}

impl NodeField {
    pub fn from_function(grid: &Grid, f: SharedFunction) -> Result<Self, GeometryError> {
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
        Ok(NodeField { grid: grid.clone(), name: f.name(), analytic: Some(f), values, gradients, hessians })
    }

    /// Field known by node values only; derivatives by finite differences.
    pub fn from_values(grid: &Grid, values: Vec<f64>, name: impl Into<String>) -> Result<Self, GeometryError> {
        if values.len() != grid.len() {
            return Err(GeometryError::DimensionMismatch { expected: grid.len(), got: values.len() });
        }
        let gradients = fd_gradients(grid, &values);
        let hessians = fd_hessians(grid, &values, &gradients);
        Ok(NodeField { grid: grid.clone(), name: name.into(), analytic: None, values, gradients, hessians })
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        let n = grid.dim();
        NodeField {
            grid: grid.clone(),
            name: format!("const({c})"),
            analytic: None,
            values: vec![c; grid.len()],
            gradients: vec![0.0; grid.len() * n],
            hessians: vec![0.0; grid.len() * n * n],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn gradient(&self, i: usize) -> DVector<f64> {
        let n = self.grid.dim();
        DVector::from_column_slice(&self.gradients[i * n..(i + 1) * n])
    }

    pub fn hessian(&self, i: usize) -> DMatrix<f64> {
        let n = self.grid.dim();
        DMatrix::from_column_slice(n, n, &self.hessians[i * n * n..(i + 1) * n * n])
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
                let n = self.grid.dim();
                let mut out = vec![0.0; n];
                self.grid.interpolate(&self.gradients, n, x, &mut out);
                DVector::from_vec(out)
            }
        }
    }

    pub fn hessian_at(&self, x: &[f64]) -> DMatrix<f64> {
        match &self.analytic {
            Some(f) => f.hessian(x),
            None => {
                let n = self.grid.dim();
                let mut out = vec![0.0; n * n];
                self.grid.interpolate(&self.hessians, n * n, x, &mut out);
                DMatrix::from_vec(n, n, out)
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
