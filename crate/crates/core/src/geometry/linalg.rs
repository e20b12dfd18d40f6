//! Small dense symmetric-matrix helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

/// Largest absolute asymmetry `|m_ij - m_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    SymmetricEigen::new(symmetrize(m)).eigenvalues
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).min()
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).max()
}

/// `f` applied to the spectrum of a symmetric matrix.
pub fn spectral_map<F: Fn(f64) -> f64>(m: &DMatrix<f64>, f: F) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

pub fn sqrt_spd(m: &DMatrix<f64>) -> DMatrix<f64> {
    spectral_map(m, |x| x.max(0.0).sqrt())
}

pub fn inv_sqrt_spd(m: &DMatrix<f64>) -> DMatrix<f64> {
    spectral_map(m, |x| 1.0 / x.sqrt())
}

/// Adjugate of a square matrix, `adj(M) M = det(M) I`. Computed from minors
/// so it stays defined when `M` is singular.
pub fn adjugate(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    match n {
        1 => DMatrix::from_element(1, 1, 1.0),
        2 => DMatrix::from_row_slice(2, 2, &[m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]]),
        _ => {
            let mut adj = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    let minor = m.clone().remove_row(i).remove_column(j);
                    let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                    adj[(j, i)] = sign * minor.determinant();
                }
            }
            adj
        }
    }
}

/// Spectral (operator 2-) norm.
pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().singular_values().max()
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixIneqReport {
    pub trace_ab: f64,
    /// `n (det A det B)^{1/n}`.
    pub det_bound: f64,
    pub trace_holds: bool,
    /// Per supplied vector: `(a_ij b_i b_j, |b|^2 / trace(A^{-1}))`.
    pub quadratic: Vec<(f64, f64)>,
    pub quadratic_holds: bool,
}

fn check_spd(m: &DMatrix<f64>, tol: f64) -> Result<(), GeometryError> {
    let asym = asymmetry(m);
    if asym > tol * (1.0 + m.amax()) {
        return Err(GeometryError::NotSymmetric(asym));
    }
    let ev = min_eigenvalue(m);
    if ev < -tol * (1.0 + m.amax()) {
        return Err(GeometryError::NotPsd(ev));
    }
    Ok(())
}

/// Checks `trace(AB) >= n (det A det B)^{1/n}` and, for every supplied vector
/// `b`, `a_ij b_i b_j >= |b|^2 / trace(A^{-1})`, with relative slack `tol`.
pub fn matrix_ineq_check(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    vectors: &[DVector<f64>],
    tol: f64,
) -> Result<MatrixIneqReport, GeometryError> {
    let n = a.nrows();
    if b.nrows() != n || a.ncols() != n || b.ncols() != n {
        return Err(GeometryError::DimensionMismatch { expected: n, got: b.nrows() });
    }
    check_spd(a, 1e-12)?;
    check_spd(b, 1e-12)?;
    let trace_ab = (a * b).trace();
    let prod = (a.determinant() * b.determinant()).max(0.0);
    let det_bound = n as f64 * prod.powf(1.0 / n as f64);
    let trace_holds = trace_ab >= det_bound - tol * det_bound.abs().max(1.0);

    let tr_inv = a.clone().try_inverse().map(|inv| inv.trace());
    let mut quadratic = Vec::with_capacity(vectors.len());
    let mut quadratic_holds = true;
    for v in vectors {
        let lhs = (v.transpose() * a * v)[(0, 0)];
        // A singular A gives trace(A^{-1}) = ∞ and a zero lower bound.
        let rhs = match tr_inv {
            Some(t) if t > 0.0 && t.is_finite() => v.norm_squared() / t,
            _ => 0.0,
        };
        quadratic_holds &= lhs >= rhs - tol * rhs.abs().max(1.0);
        quadratic.push((lhs, rhs));
    }
    Ok(MatrixIneqReport { trace_ab, det_bound, trace_holds, quadratic, quadratic_holds })
}
