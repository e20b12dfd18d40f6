//! Grids, convex potentials, finite-difference calculus and matrix utilities.

pub mod cells;
pub mod checks;
pub mod families;
pub mod field;
pub mod grid;
pub mod hull;
pub mod linalg;
pub mod potential;

pub use cells::CellSet;
pub use checks::{aleksandrov_check, cofactor, gradient_estimate_check, CofactorField, EstimateCheck};
pub use families::{
    CosinePerturbed, GaussianBump, Pullback, QuadraticForm, RadialPotential, SharedFunction,
    SmoothFunction,
};
pub use field::NodeField;
pub use grid::Grid;
pub use linalg::{matrix_ineq_check, MatrixIneqReport};
pub use potential::{Derivatives, Pinching, Potential, PotentialKind, Stencil};

use serde::{Deserialize, Serialize};

/// Structural constants: pinching of `det D^2 u`, the coefficient envelope
/// relative to the cofactor matrix, and the drift integrability exponent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuralConstants {
    pub lambda: f64,
    pub big_lambda: f64,
    pub lambda_tilde: f64,
    pub big_lambda_tilde: f64,
    pub p: f64,
}

impl StructuralConstants {
    pub fn validate(&self, dim: usize) -> Result<(), crate::error::GeometryError> {
        use crate::error::GeometryError::InvalidParameter;
        if !(self.lambda > 0.0 && self.lambda <= self.big_lambda) {
            return Err(InvalidParameter(format!(
                "need 0 < lambda <= Lambda, got {} and {}",
                self.lambda, self.big_lambda
            )));
        }
        if !(self.lambda_tilde > 0.0 && self.lambda_tilde <= self.big_lambda_tilde) {
            return Err(InvalidParameter(format!(
                "need 0 < lambda_tilde <= Lambda_tilde, got {} and {}",
                self.lambda_tilde, self.big_lambda_tilde
            )));
        }
        if self.p <= dim as f64 {
            return Err(InvalidParameter(format!("drift exponent p = {} must exceed n = {dim}", self.p)));
        }
        Ok(())
    }

    /// Whether `p > n(1 + α*) / (2 α*)`, the range the Harnack estimate needs.
    pub fn harnack_admissible(&self, dim: usize, alpha_star: f64) -> bool {
        self.p > dim as f64 * (1.0 + alpha_star) / (2.0 * alpha_star)
    }
}

/// `(Σ |f|^p · cell)^{1/p}` over the listed cells, by node (midpoint) quadrature.
pub fn lp_norm<F: Fn(usize) -> f64>(grid: &Grid, cells: &CellSet, p: f64, f: F) -> f64 {
    let s: f64 = cells.iter().map(|c| f(c).abs().powf(p)).sum();
    (s * grid.cell_measure()).powf(1.0 / p)
}
