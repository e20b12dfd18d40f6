//! Closed-form smooth functions: the shipped convex potentials and generic
//! helpers used for solution samples.

use std::f64::consts::PI;
use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

/// A `C^2` function with exact derivatives.
pub trait SmoothFunction: Send + Sync + Debug {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> DVector<f64>;
    fn hessian(&self, x: &[f64]) -> DMatrix<f64>;
    fn name(&self) -> String;

    /// Closed-form bounds of `det D^2` over the box `[lo, hi]`, when known.
    fn det_bounds(&self, _lo: &[f64], _hi: &[f64]) -> Option<(f64, f64)> {
        None
    }
}

pub type SharedFunction = Arc<dyn SmoothFunction>;

/// `u(x) = ½ (x - x0)ᵀ M (x - x0)`.
#[derive(Clone, Debug)]
pub struct QuadraticForm {
    pub matrix: DMatrix<f64>,
    pub center: DVector<f64>,
    label: String,
}

impl QuadraticForm {
    pub fn new(matrix: DMatrix<f64>, center: DVector<f64>, label: impl Into<String>) -> Self {
        QuadraticForm { matrix, center, label: label.into() }
    }

    /// `|x|^2 / 2`.
    pub fn identity(dim: usize) -> Self {
        Self::new(DMatrix::identity(dim, dim), DVector::zeros(dim), "quadratic")
    }

    /// Hessian `diag(1/s, s)` (padded with ones past two axes), determinant one.
    pub fn eccentric(dim: usize, s: f64) -> Self {
        let mut d = vec![1.0; dim];
        d[0] = 1.0 / s;
        if dim > 1 {
            d[1] = s;
        }
        Self::new(
            DMatrix::from_diagonal(&DVector::from_vec(d)),
            DVector::zeros(dim),
            format!("eccentric(s={s})"),
        )
    }

    /// `c |x|^2 / 2`, determinant `c^n`.
    pub fn scaled(dim: usize, c: f64) -> Self {
        Self::new(DMatrix::identity(dim, dim) * c, DVector::zeros(dim), format!("scaled(c={c})"))
    }
}

impl SmoothFunction for QuadraticForm {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let d = DVector::from_column_slice(x) - &self.center;
        0.5 * d.dot(&(&self.matrix * &d))
    }

    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        &self.matrix * (DVector::from_column_slice(x) - &self.center)
    }

    fn hessian(&self, _x: &[f64]) -> DMatrix<f64> {
        self.matrix.clone()
    }

    fn name(&self) -> String {
        self.label.clone()
    }

    fn det_bounds(&self, _lo: &[f64], _hi: &[f64]) -> Option<(f64, f64)> {
        let d = self.matrix.determinant();
        Some((d, d))
    }
}

/// Radial convex function with `det D^2 u = c0 + c1 |x|^2`.
///
/// With `w = c0 + k r^2`, `k = c1 n / (n + 2)`, the gradient is `x w^{1/n}`
/// and the Hessian `w^{1/n} I + (2k/n) w^{1/n - 1} x xᵀ`.
#[derive(Clone, Debug)]
pub struct RadialPotential {
    dim: usize,
    pub c0: f64,
    pub c1: f64,
}

impl RadialPotential {
    pub fn new(dim: usize, c0: f64, c1: f64) -> Self {
        assert!(c0 > 0.0 && c1 >= 0.0, "radial potential needs c0 > 0, c1 >= 0");
        RadialPotential { dim, c0, c1 }
    }

    fn k(&self) -> f64 {
        self.c1 * self.dim as f64 / (self.dim as f64 + 2.0)
    }
}

impl SmoothFunction for RadialPotential {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        let n = self.dim as f64;
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let k = self.k();
        if k == 0.0 {
            return 0.5 * self.c0.powf(1.0 / n) * r2;
        }
        let w = self.c0 + k * r2;
        let e = 1.0 + 1.0 / n;
        (w.powf(e) - self.c0.powf(e)) / (2.0 * k * e)
    }

    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let n = self.dim as f64;
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let w = self.c0 + self.k() * r2;
        DVector::from_column_slice(x) * w.powf(1.0 / n)
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim as f64;
        let xv = DVector::from_column_slice(x);
        let w = self.c0 + self.k() * xv.norm_squared();
        DMatrix::identity(self.dim, self.dim) * w.powf(1.0 / n)
            + &xv * xv.transpose() * (2.0 * self.k() / n * w.powf(1.0 / n - 1.0))
    }

    fn name(&self) -> String {
        format!("radial(c0={},c1={})", self.c0, self.c1)
    }

    fn det_bounds(&self, lo: &[f64], hi: &[f64]) -> Option<(f64, f64)> {
        let rmax2: f64 = lo.iter().zip(hi).map(|(a, b)| a.abs().max(b.abs()).powi(2)).sum();
        let rmin2: f64 = lo
            .iter()
            .zip(hi)
            .map(|(&a, &b)| if a <= 0.0 && b >= 0.0 { 0.0 } else { a.abs().min(b.abs()).powi(2) })
            .sum();
        Some((self.c0 + self.c1 * rmin2, self.c0 + self.c1 * rmax2))
    }
}

/// `|x|^2/2 + η Σ cos(ω x_i)/ω^2`, Hessian `diag(1 - η cos(ω x_i))`.
#[derive(Clone, Debug)]
pub struct CosinePerturbed {
    dim: usize,
    pub eta: f64,
    pub omega: f64,
}

impl CosinePerturbed {
    pub fn new(dim: usize, eta: f64, omega: f64) -> Self {
        assert!((0.0..1.0).contains(&eta) && omega > 0.0, "need 0 <= eta < 1, omega > 0");
        CosinePerturbed { dim, eta, omega }
    }
}

impl SmoothFunction for CosinePerturbed {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        let w2 = self.omega * self.omega;
        x.iter().map(|&t| 0.5 * t * t + self.eta * (self.omega * t).cos() / w2).sum()
    }

    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.dim,
            x.iter().map(|&t| t - self.eta * (self.omega * t).sin() / self.omega),
        )
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            self.dim,
            x.iter().map(|&t| 1.0 - self.eta * (self.omega * t).cos()),
        ))
    }

    fn name(&self) -> String {
        format!("cosine(eta={},omega={})", self.eta, self.omega)
    }

    fn det_bounds(&self, lo: &[f64], hi: &[f64]) -> Option<(f64, f64)> {
        // Per-axis range of 1 - η cos(ω t) over [lo_i, hi_i].
        let mut dmin = 1.0;
        let mut dmax = 1.0;
        for (&a, &b) in lo.iter().zip(hi) {
            let (cmin, cmax) = cos_range(self.omega * a, self.omega * b);
            dmin *= 1.0 - self.eta * cmax;
            dmax *= 1.0 - self.eta * cmin;
        }
        Some((dmin, dmax))
    }
}

/// Range of `cos` over `[a, b]`.
fn cos_range(a: f64, b: f64) -> (f64, f64) {
    let mut lo = a.cos().min(b.cos());
    let mut hi = a.cos().max(b.cos());
    let k0 = (a / PI).ceil() as i64;
    let k1 = (b / PI).floor() as i64;
    for k in k0..=k1 {
        if k.rem_euclid(2) == 0 {
            hi = 1.0;
        } else {
            lo = -1.0;
        }
    }
    (lo, hi)
}

/// `scale · f(A x + b)`: the pullback of `f` under an affine map.
#[derive(Clone, Debug)]
pub struct Pullback {
    pub inner: SharedFunction,
    pub linear: DMatrix<f64>,
    pub shift: DVector<f64>,
    pub scale: f64,
}

impl Pullback {
    pub fn new(inner: SharedFunction, linear: DMatrix<f64>, shift: DVector<f64>, scale: f64) -> Self {
        Pullback { inner, linear, shift, scale }
    }

    fn map(&self, x: &[f64]) -> DVector<f64> {
        &self.linear * DVector::from_column_slice(x) + &self.shift
    }
}

impl SmoothFunction for Pullback {
    fn dim(&self) -> usize {
        self.linear.ncols()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.scale * self.inner.value(self.map(x).as_slice())
    }

    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        self.linear.transpose() * self.inner.gradient(self.map(x).as_slice()) * self.scale
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        self.linear.transpose() * self.inner.hessian(self.map(x).as_slice()) * &self.linear * self.scale
    }

    fn name(&self) -> String {
        format!("pullback({})", self.inner.name())
    }
}

/// Affine function `κ + ℓ·x`.
#[derive(Clone, Debug)]
pub struct AffineFunction {
    pub constant: f64,
    pub slope: DVector<f64>,
}

impl SmoothFunction for AffineFunction {
    fn dim(&self) -> usize {
        self.slope.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.constant + self.slope.dot(&DVector::from_column_slice(x))
    }

    fn gradient(&self, _x: &[f64]) -> DVector<f64> {
        self.slope.clone()
    }

    fn hessian(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(self.dim(), self.dim())
    }

    fn name(&self) -> String {
        "affine".into()
    }
}

/// Sum of functions.
#[derive(Clone, Debug)]
pub struct SumFunction {
    pub terms: Vec<SharedFunction>,
}

impl SmoothFunction for SumFunction {
    fn dim(&self) -> usize {
        self.terms[0].dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.value(x)).sum()
    }

    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim());
        for t in &self.terms {
            g += t.gradient(x);
        }
        g
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let mut h = DMatrix::zeros(n, n);
        for t in &self.terms {
            h += t.hessian(x);
        }
        h
    }

    fn name(&self) -> String {
        let names: Vec<String> = self.terms.iter().map(|t| t.name()).collect();
        names.join("+")
    }
}

/// Gaussian bump `amp · exp(-|x - c|^2 / (2 σ^2))`.
#[derive(Clone, Debug)]
pub struct GaussianBump {
    pub amplitude: f64,
    pub center: DVector<f64>,
    pub sigma: f64,
}

impl SmoothFunction for GaussianBump {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let d = DVector::from_column_slice(x) - &self.center;
        self.amplitude * (-d.norm_squared() / (2.0 * self.sigma * self.sigma)).exp()
    }

    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let d = DVector::from_column_slice(x) - &self.center;
        let s2 = self.sigma * self.sigma;
        let g = self.amplitude * (-d.norm_squared() / (2.0 * s2)).exp();
        d * (-g / s2)
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let d = DVector::from_column_slice(x) - &self.center;
        let s2 = self.sigma * self.sigma;
        let g = self.amplitude * (-d.norm_squared() / (2.0 * s2)).exp();
        (&d * d.transpose() / (s2 * s2) - DMatrix::identity(n, n) / s2) * g
    }

    fn name(&self) -> String {
        format!("bump(sigma={})", self.sigma)
    }
}

/// Radial profile `g(ρ)` with `ρ = sqrt(|x - c|^2 + η^2)`, built from `g`,
/// `g'` and `g''`.
#[derive(Clone)]
pub struct RadialProfile {
    pub center: DVector<f64>,
    pub eta: f64,
    pub g: Arc<dyn Fn(f64) -> (f64, f64, f64) + Send + Sync>,
    pub label: String,
}

impl Debug for RadialProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RadialProfile").field("label", &self.label).field("eta", &self.eta).finish()
    }
}

impl RadialProfile {
    /// `κ / (δ0 + ρ)`: a smoothed truncation of `1/|x|`.
    pub fn truncated_inverse(center: DVector<f64>, kappa: f64, delta0: f64, eta: f64) -> Self {
        RadialProfile {
            center,
            eta,
            g: Arc::new(move |r| {
                let d = delta0 + r;
                (kappa / d, -kappa / (d * d), 2.0 * kappa / (d * d * d))
            }),
            label: format!("truncated_inverse(delta0={delta0})"),
        }
    }
}

impl SmoothFunction for RadialProfile {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let d = DVector::from_column_slice(x) - &self.center;
        let r = (d.norm_squared() + self.eta * self.eta).sqrt();
        (self.g)(r).0
    }

    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let d = DVector::from_column_slice(x) - &self.center;
        let r = (d.norm_squared() + self.eta * self.eta).sqrt();
        let (_, g1, _) = (self.g)(r);
        if r == 0.0 {
            return DVector::zeros(self.dim());
        }
        d * (g1 / r)
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let d = DVector::from_column_slice(x) - &self.center;
        let r = (d.norm_squared() + self.eta * self.eta).sqrt();
        let (_, g1, g2) = (self.g)(r);
        if r == 0.0 {
            return DMatrix::identity(n, n) * g2;
        }
        // ∂ρ = d/ρ, ∂²ρ = I/ρ - d dᵀ/ρ³.
        let ddt = &d * d.transpose();
        &ddt * (g2 / (r * r)) + (DMatrix::identity(n, n) / r - &ddt / (r * r * r)) * g1
    }

    fn name(&self) -> String {
        self.label.clone()
    }
}

/// Volume of the unit ball in dimension `n`.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        1 => 2.0,
        2 => PI,
        3 => 4.0 * PI / 3.0,
        _ => PI.powf(n as f64 / 2.0) / gamma_half_integer(n as f64 / 2.0 + 1.0),
    }
}

fn gamma_half_integer(x: f64) -> f64 {
    if (x - 1.0).abs() < 1e-12 {
        1.0
    } else if (x - 0.5).abs() < 1e-12 {
        PI.sqrt()
    } else {
        (x - 1.0) * gamma_half_integer(x - 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(f: &dyn SmoothFunction, x: &[f64]) {
        let n = f.dim();
        let h = 1e-5;
        let g = f.gradient(x);
        let hs = f.hessian(x);
        for i in 0..n {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            let gi = (f.value(&xp) - f.value(&xm)) / (2.0 * h);
            assert!((gi - g[i]).abs() < 1e-6, "{}: grad {i}: {gi} vs {}", f.name(), g[i]);
            let dg = (f.gradient(&xp) - f.gradient(&xm)) / (2.0 * h);
            for j in 0..n {
                assert!((dg[j] - hs[(j, i)]).abs() < 1e-5, "{}: hess {j}{i}", f.name());
            }
        }
    }

    #[test]
    fn derivatives_agree_with_differences() {
        let x = [0.3, -0.7];
        fd_check(&QuadraticForm::eccentric(2, 4.0), &x);
        fd_check(&RadialPotential::new(2, 0.5, 1.5), &x);
        fd_check(&RadialPotential::new(3, 1.0, 0.7), &[0.2, 0.4, -0.5]);
        fd_check(&CosinePerturbed::new(2, 0.3, 3.0), &x);
        fd_check(
            &GaussianBump { amplitude: 2.0, center: DVector::from_vec(vec![0.1, 0.2]), sigma: 0.4 },
            &x,
        );
        fd_check(&RadialProfile::truncated_inverse(DVector::zeros(2), 1.0, 0.1, 0.05), &x);
        let inner: SharedFunction = Arc::new(RadialPotential::new(2, 1.0, 1.0));
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, -0.1, 0.5]);
        fd_check(&Pullback::new(inner, m, DVector::from_vec(vec![0.1, -0.2]), 0.7), &x);
    }

    #[test]
    fn radial_determinant_is_prescribed() {
        for dim in 1..=3 {
            let u = RadialPotential::new(dim, 0.5, 1.5);
            let x: Vec<f64> = (0..dim).map(|i| 0.2 + 0.1 * i as f64).collect();
            let r2: f64 = x.iter().map(|v| v * v).sum();
            assert!((u.hessian(&x).determinant() - (0.5 + 1.5 * r2)).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_det_bounds_enclose_samples() {
        let u = CosinePerturbed::new(2, 0.4, 5.0);
        let (lo, hi) = u.det_bounds(&[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        assert!((lo - 0.36).abs() < 1e-12 && (hi - 1.96).abs() < 1e-12);
        let (lo, hi) = u.det_bounds(&[0.1, 0.1], &[0.2, 0.2]).unwrap();
        let d = u.hessian(&[0.15, 0.12]).determinant();
        assert!(lo <= d && d <= hi);
    }

    #[test]
    fn ball_volumes() {
        assert_eq!(unit_ball_volume(2), PI);
        assert!((unit_ball_volume(4) - PI * PI / 2.0).abs() < 1e-12);
    }
}
