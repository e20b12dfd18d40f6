//! Least-squares fits used to turn sweeps into exponents.

use serde::{Deserialize, Serialize};

use crate::error::FitError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    /// Fitted exponent `p` in `y ≈ C x^p`.
    pub slope: f64,
    /// Fitted coefficient `C`.
    pub coefficient: f64,
    pub points: usize,
}

/// Ordinary least squares line through `(x, y)`; returns `(slope, intercept)`.
pub fn linear_fit(xs: &[f64], ys: &[f64], min_points: usize) -> Result<(f64, f64), FitError> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .map(|(&x, &y)| (x, y))
        .collect();
    let n = pts.len();
    let needed = min_points.max(2);
    if n < needed {
        return Err(FitError::FitDegenerate { needed, got: n });
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 1e-14 * (1.0 + mx * mx) {
        return Err(FitError::FitDegenerate { needed, got: 1 });
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Fit `y = C x^p` in log-log space. Non-positive entries are dropped.
pub fn power_fit(xs: &[f64], ys: &[f64], min_points: usize) -> Result<PowerFit, FitError> {
    let (lx, ly): (Vec<f64>, Vec<f64>) = xs
        .iter()
        .zip(ys)
        .filter(|(&x, &y)| x > 0.0 && y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .unzip();
    let (slope, icpt) = linear_fit(&lx, &ly, min_points)?;
    Ok(PowerFit { slope, coefficient: icpt.exp(), points: lx.len() })
}
