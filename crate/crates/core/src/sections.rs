//! Sections `S_u(x, h) = {y : u(y) < u(x) + Du(x)·(y - x) + h}` and the
//! measured structure constants of their geometry.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FitError, GeometryError, SectionError};
use crate::fit::power_fit;
use crate::geometry::{CellSet, Grid, Potential};

/// Cells this close to the grid edge disqualify compact containment.
pub const CONTAINMENT_MARGIN: usize = 2;

/// Supporting plane of `u` at a point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tilt {
    pub center: Vec<f64>,
    pub value: f64,
    pub slope: Vec<f64>,
}

impl Tilt {
    pub fn at_point(u: &Potential, x: &[f64]) -> Result<Self, GeometryError> {
        let d = u.eval_derivatives(x)?;
        Ok(Tilt { center: x.to_vec(), value: d.value, slope: d.gradient.as_slice().to_vec() })
    }

    pub fn at_node(u: &Potential, idx: usize) -> Self {
        Tilt { center: u.grid().point(idx), value: u.value(idx), slope: u.gradient(idx).to_vec() }
    }

    /// `u(y) - u(x) - Du(x)·(y - x)` given `u(y)`.
    #[inline]
    pub fn bracket_with(&self, uy: f64, y: &[f64]) -> f64 {
        let mut lin = self.value;
        for k in 0..self.center.len() {
            lin += self.slope[k] * (y[k] - self.center[k]);
        }
        uy - lin
    }

    pub fn bracket_node(&self, u: &Potential, idx: usize) -> f64 {
        let mut p = [0.0; 3];
        u.grid().point_into(idx, &mut p[..u.dim()]);
        self.bracket_with(u.value(idx), &p[..u.dim()])
    }

    pub fn bracket_point(&self, u: &Potential, y: &[f64]) -> f64 {
        self.bracket_with(u.value_at(y), y)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectionSet {
    pub tilt: Tilt,
    pub height: f64,
    pub cells: CellSet,
    /// Non-members sharing a face with a member.
    pub boundary: CellSet,
    pub measure: f64,
    pub compactly_contained: bool,
}

impl SectionSet {
    pub fn center(&self) -> &[f64] {
        &self.tilt.center
    }

    /// Members together with the boundary ring.
    pub fn closure(&self) -> CellSet {
        self.cells.union(&self.boundary)
    }

    /// Largest distance from the center to a member node.
    pub fn max_radius(&self, grid: &Grid) -> f64 {
        self.cells
            .iter()
            .map(|c| dist(&grid.point(c), self.center()))
            .fold(0.0, f64::max)
    }

    pub fn require_contained(&self) -> Result<(), SectionError> {
        if self.compactly_contained {
            Ok(())
        } else {
            Err(SectionError::NotCompactlyContained { center: self.center().to_vec(), height: self.height })
        }
    }
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
}

/// Section about an arbitrary point of the grid box.
pub fn section(u: &Potential, x: &[f64], h: f64) -> Result<SectionSet, SectionError> {
    let tilt = Tilt::at_point(u, x)?;
    section_with_tilt(u, tilt, h)
}

/// Section about a grid node, using the node's cached derivatives.
pub fn section_at_node(u: &Potential, idx: usize, h: f64) -> Result<SectionSet, SectionError> {
    section_with_tilt(u, Tilt::at_node(u, idx), h)
}

pub fn section_with_tilt(u: &Potential, tilt: Tilt, h: f64) -> Result<SectionSet, SectionError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(SectionError::PreconditionViolation(format!("section height must be positive, got {h}")));
    }
    let grid = u.grid();
    let n = grid.dim();
    let members: Vec<usize> = (0..grid.len())
        .into_par_iter()
        .with_min_len(4096)
        .filter(|&i| {
            let mut p = [0.0; 3];
            grid.point_into(i, &mut p[..n]);
            tilt.bracket_with(u.value(i), &p[..n]) < h
        })
        .collect();
    let cells = CellSet::from_unsorted(members);
    let compactly_contained = cells.iter().all(|c| grid.edge_distance(c) >= CONTAINMENT_MARGIN);
    let boundary = cells.outer_ring(grid);
    let measure = cells.measure(grid);
    Ok(SectionSet { tilt, height: h, cells, boundary, measure, compactly_contained })
}

/// Samples segments between random member pairs and counts sample points
/// whose nearest node has no member in its 3^n stencil.
pub fn convexity_defects(grid: &Grid, cells: &CellSet, pairs: usize, seed: u64) -> usize {
    if cells.len() < 2 {
        return 0;
    }
    let mask = cells.to_mask(grid.len());
    let offsets = grid.stencil_offsets();
    let near_member = |idx: usize| {
        mask[idx] || offsets.iter().any(|d| grid.shift(idx, &d[..grid.dim()]).is_some_and(|j| mask[j]))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = 0.5 * grid.spacing().iter().cloned().fold(f64::INFINITY, f64::min);
    let mut defects = 0;
    for _ in 0..pairs {
        let a = grid.point(cells.indices()[rng.random_range(0..cells.len())]);
        let b = grid.point(cells.indices()[rng.random_range(0..cells.len())]);
        let len = dist(&a, &b);
        let k = (len / step).ceil().max(1.0) as usize;
        for j in 0..=k {
            let t = j as f64 / k as f64;
            let p: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + t * (y - x)).collect();
            match grid.nearest(&p) {
                Some(i) if near_member(i) => {}
                _ => defects += 1,
            }
        }
    }
    defects
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeRow {
    pub height: f64,
    pub measure: f64,
    pub ratio: f64,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeSweep {
    pub rows: Vec<VolumeRow>,
    pub min_ratio: f64,
    pub max_ratio: f64,
}

impl VolumeSweep {
    /// `max/min` spread of the ratio over the sweep.
    pub fn band(&self) -> f64 {
        self.max_ratio / self.min_ratio
    }
}

/// `|S_u(x, h)| / h^{n/2}` over a list of heights.
pub fn volume_ratio_sweep(u: &Potential, x: &[f64], heights: &[f64]) -> Result<VolumeSweep, SectionError> {
    let n = u.dim() as f64;
    let tilt = Tilt::at_point(u, x)?;
    let mut rows = Vec::with_capacity(heights.len());
    for &h in heights {
        let s = section_with_tilt(u, tilt.clone(), h)?;
        s.require_contained()?;
        rows.push(VolumeRow {
            height: h,
            measure: s.measure,
            ratio: s.measure / h.powf(n / 2.0),
            radius: s.max_radius(u.grid()),
        });
    }
    let min_ratio = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    let max_ratio = rows.iter().map(|r| r.ratio).fold(f64::NEG_INFINITY, f64::max);
    Ok(VolumeSweep { rows, min_ratio, max_ratio })
}

/// Largest `bracket_x(z) / h` over `x` in `xs` and `z` in `zs`.
fn max_dilation(u: &Potential, xs: &CellSet, zs: &CellSet, h: f64) -> f64 {
    let grid = u.grid();
    let zpts: Vec<(Vec<f64>, f64)> = zs.iter().map(|z| (grid.point(z), u.value(z))).collect();
    xs.indices()
        .par_iter()
        .map(|&x| {
            let t = Tilt::at_node(u, x);
            zpts.iter().map(|(p, v)| t.bracket_with(*v, p)).fold(f64::NEG_INFINITY, f64::max) / h
        })
        .reduce(|| f64::NEG_INFINITY, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngulfingEstimate {
    pub theta0: f64,
    /// Smallest admissible `θ` per sample, before the floor at 2.
    pub per_sample: Vec<f64>,
}

/// Smallest `θ >= 2` with `S_u(y, h) ⊂ S_u(x, θ h)` for every sample `(y, h)`
/// and every member node `x` of `S_u(y, h)`.
///
/// The containment fails exactly when some member `z` has
/// `bracket_x(z) >= θ h`, so the smallest `θ` is the supremum of that ratio.
/// Only the boundary layer of `S_u(y, h)` needs scanning for `z`, since the
/// bracket is convex in `z` and peaks at extreme points.
pub fn estimate_engulfing(u: &Potential, samples: &[(Vec<f64>, f64)]) -> Result<EngulfingEstimate, SectionError> {
    let grid = u.grid();
    let mut per_sample = Vec::with_capacity(samples.len());
    for (y, h) in samples {
        section(u, y, 2.0 * h)?.require_contained()?;
        let s = section(u, y, *h)?;
        let layer = s.cells.inner_layer(grid);
        per_sample.push(max_dilation(u, &s.cells, &layer, *h));
    }
    let theta0 = per_sample.iter().cloned().fold(2.0, f64::max);
    Ok(EngulfingEstimate { theta0, per_sample })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeFit {
    pub mu: f64,
    pub c: f64,
    /// `(center index, height, max radius)` rows used by the fit.
    pub rows: Vec<(usize, f64, f64)>,
}

/// Fits `max radius of S_u(x, h) ≈ C h^μ` per center and keeps the smallest
/// exponent together with the coefficient that makes it an upper bound.
pub fn estimate_size_exponent(
    u: &Potential,
    centers: &[Vec<f64>],
    heights: &[f64],
) -> Result<SizeFit, SectionError> {
    let grid = u.grid();
    let mut rows = Vec::new();
    let mut mu = f64::INFINITY;
    for (ci, x) in centers.iter().enumerate() {
        let tilt = Tilt::at_point(u, x)?;
        let mut hs = Vec::new();
        let mut rs = Vec::new();
        for &h in heights {
            let s = section_with_tilt(u, tilt.clone(), h)?;
            if !s.compactly_contained || s.cells.len() < 2 {
                continue;
            }
            let r = s.max_radius(grid);
            hs.push(h);
            rs.push(r);
            rows.push((ci, h, r));
        }
        let fit = power_fit(&hs, &rs, 4)?;
        mu = mu.min(fit.slope);
    }
    if !mu.is_finite() {
        return Err(FitError::FitDegenerate { needed: 4, got: 0 }.into());
    }
    let c = rows.iter().map(|&(_, h, r)| r / h.powf(mu)).fold(0.0, f64::max);
    Ok(SizeFit { mu, c, rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InclusionReport {
    /// Largest `c0` making the inclusion hold for every `x1` in the sweep.
    pub c0_inclusion: f64,
    /// Largest `c0` making the disjointness hold for every annulus point.
    pub c0_exclusion: f64,
    pub inclusion_holds: bool,
    pub exclusion_holds: bool,
    pub inclusion_samples: usize,
    pub exclusion_samples: usize,
}

/// Inclusion `S(x1, c0 (s-r)^{p1} t) ⊂ S(x0, s t)` for `x1 ∈ S(x0, r t)` and
/// disjointness `S(x1, c0 (s-r)^{p1} t) ∩ S(x0, r t) = ∅` for `x1` in
/// `S(x0, t) \ S(x0, s t)`, checked for the given `c0` and measured as the
/// largest admissible `c0`.
#[allow(clippy::too_many_arguments)]
pub fn inclusion_exclusion_check(
    u: &Potential,
    x0: &[f64],
    t: f64,
    r: f64,
    s: f64,
    p1: f64,
    c0: f64,
    x1s: &[Vec<f64>],
) -> Result<InclusionReport, SectionError> {
    if !(0.0 < r && r <= s && s <= 1.0) {
        return Err(SectionError::PreconditionViolation(format!("need 0 < r <= s <= 1, got r={r}, s={s}")));
    }
    let grid = u.grid();
    let t0 = Tilt::at_point(u, x0)?;
    section_with_tilt(u, t0.clone(), 2.0 * t)?.require_contained()?;
    let outer = section_with_tilt(u, t0.clone(), s * t)?;
    let inner = section_with_tilt(u, t0.clone(), r * t)?;
    let outside: Vec<usize> = outer.cells.to_mask(grid.len()).iter().enumerate().filter(|(_, m)| !**m).map(|(i, _)| i).collect();
    let gap = (s - r).powf(p1) * t;
    let mut c0_inc = f64::INFINITY;
    let mut c0_exc = f64::INFINITY;
    let (mut n_inc, mut n_exc) = (0, 0);
    for x1 in x1s {
        let b = t0.bracket_point(u, x1);
        let t1 = Tilt::at_point(u, x1)?;
        if b < r * t {
            // Largest height whose section avoids every node outside S(x0, st).
            let hstar = outside.iter().map(|&z| t1.bracket_node(u, z)).fold(f64::INFINITY, f64::min);
            n_inc += 1;
            if gap > 0.0 {
                c0_inc = c0_inc.min(hstar / gap);
            }
        } else if b >= s * t && b < t && s < 1.0 {
            let hstar = inner.cells.iter().map(|z| t1.bracket_node(u, z)).fold(f64::INFINITY, f64::min);
            n_exc += 1;
            if gap > 0.0 {
                c0_exc = c0_exc.min(hstar / gap);
            }
        }
    }
    Ok(InclusionReport {
        c0_inclusion: c0_inc,
        c0_exclusion: c0_exc,
        // Strict inequalities: the section of height c0·gap stays inside iff
        // c0·gap <= the first outside bracket.
        inclusion_holds: c0 <= c0_inc,
        exclusion_holds: c0 <= c0_exc,
        inclusion_samples: n_inc,
        exclusion_samples: n_exc,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct C1AlphaFit {
    pub alpha_star: f64,
    pub c: f64,
    pub fitted_slope: f64,
}

/// Fits `max |Du(x) - Du(y)|` against `|x - y|` over groups of equal distance.
pub fn estimate_c1alpha(u: &Potential, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<C1AlphaFit, SectionError> {
    let mut groups: Vec<(f64, f64)> = Vec::new();
    let mut all = Vec::with_capacity(pairs.len());
    for (x, y) in pairs {
        let d = dist(x, y);
        if d == 0.0 {
            continue;
        }
        let g = (u.gradient_at(x) - u.gradient_at(y)).norm();
        all.push((d, g));
        match groups.iter_mut().find(|(gd, _)| (gd - d).abs() <= 1e-9 * d) {
            Some(e) => e.1 = e.1.max(g),
            None => groups.push((d, g)),
        }
    }
    let (ds, gs): (Vec<f64>, Vec<f64>) = groups.into_iter().unzip();
    let fit = power_fit(&ds, &gs, 2)?;
    let alpha_star = fit.slope.min(1.0);
    if alpha_star <= 0.0 {
        return Err(FitError::FitDegenerate { needed: 2, got: ds.len() }.into());
    }
    let c = all.iter().map(|&(d, g)| g / d.powf(alpha_star)).fold(0.0, f64::max);
    Ok(C1AlphaFit { alpha_star, c, fitted_slope: fit.slope })
}

/// Pairs `(x, x + d e)` with random centers in `section`, random unit
/// directions `e`, and every `d` in `distances`; draws leaving the section
/// are skipped.
pub fn sample_pairs(
    u: &Potential,
    section: &SectionSet,
    distances: &[f64],
    count: usize,
    seed: u64,
) -> Vec<(Vec<f64>, Vec<f64>)> {
    let grid = u.grid();
    let n = grid.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count && attempts < 50 * count && !section.cells.is_empty() {
        attempts += 1;
        let x = grid.point(section.cells.indices()[rng.random_range(0..section.cells.len())]);
        let mut e: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-3 {
            continue;
        }
        e.iter_mut().for_each(|v| *v /= norm);
        // Every distance shares the same center and direction, so groups
        // differ only in the distance.
        let ys: Vec<Vec<f64>> = distances
            .iter()
            .map(|d| x.iter().zip(&e).map(|(a, b)| a + d * b).collect())
            .collect();
        if ys.iter().all(|y| grid.contains_point(y) && section.tilt.bracket_point(u, y) < section.height) {
            out.extend(ys.into_iter().map(|y| (x.clone(), y)));
        }
    }
    out.truncate(count);
    out
}

/// A measured constant with the parameter range it was measured on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub value: f64,
    pub sweep: (f64, f64),
    pub note: String,
}

impl Measured {
    pub fn new(value: f64, sweep: (f64, f64), note: impl Into<String>) -> Self {
        Measured { value, sweep, note: note.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryConstants {
    pub theta0: Measured,
    pub mu: Measured,
    pub p1: Measured,
    pub c0: Measured,
    pub k: Measured,
    pub k_hat: Measured,
    pub alpha_star: Measured,
}

impl GeometryConstants {
    /// The covering dilation `K = 2 θ0²`.
    pub fn covering_k(&self) -> f64 {
        2.0 * self.theta0.value * self.theta0.value
    }
}

/// Smallest `K̂` with `S(x, K t) ⊂ S(y, K̂ h)` whenever `S(x, t) ⊂ S(y, h)`,
/// over sampled sub-sections `S(x, t)` of `S(y, h)`.
pub fn estimate_k_hat(
    u: &Potential,
    y: &[f64],
    h: f64,
    k: f64,
    subsections: &[(Vec<f64>, f64)],
) -> Result<f64, SectionError> {
    let ty = Tilt::at_point(u, y)?;
    let big = section_with_tilt(u, ty.clone(), h)?;
    let mut k_hat: f64 = 1.0;
    for (x, t) in subsections {
        let tx = Tilt::at_point(u, x)?;
        let small = section_with_tilt(u, tx.clone(), *t)?;
        if !small.cells.is_subset(&big.cells) {
            continue;
        }
        let dilated = section_with_tilt(u, tx, k * t)?;
        if !dilated.compactly_contained {
            return Err(SectionError::NotCompactlyContained { center: x.clone(), height: k * t });
        }
        let need = dilated.cells.iter().map(|z| ty.bracket_node(u, z)).fold(0.0, f64::max) / h;
        k_hat = k_hat.max(need);
    }
    Ok(k_hat)
}

/// Runs every estimator around `x0` on the heights in `heights` (ascending)
/// and bundles the results.
pub fn measure_geometry_constants(
    u: &Potential,
    x0: &[f64],
    heights: &[f64],
    seed: u64,
) -> Result<GeometryConstants, SectionError> {
    let n = u.dim() as f64;
    let hmin = heights.iter().cloned().fold(f64::INFINITY, f64::min);
    let hmax = heights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sweep = (hmin, hmax);
    let top = section(u, x0, hmax)?;
    top.require_contained()?;
    let grid = u.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let half = section(u, x0, hmax / 2.0)?;
    let mut eng_samples = vec![(x0.to_vec(), hmax / 4.0)];
    for _ in 0..3 {
        let c = half.cells.indices()[rng.random_range(0..half.cells.len())];
        eng_samples.push((grid.point(c), hmax / 8.0));
    }
    let theta0 = estimate_engulfing(u, &eng_samples)?.theta0;

    let size_heights: Vec<f64> = heights.iter().cloned().filter(|&h| h <= hmax / 4.0).collect();
    let size = estimate_size_exponent(u, &[x0.to_vec()], &size_heights)?;
    let mu = size.mu.clamp(1e-3, 1.0 - 1e-9);
    let p1 = (n + 1.0) / mu;

    let inner = section(u, x0, hmax / 4.0)?;
    let x1s: Vec<Vec<f64>> = (0..20)
        .map(|_| grid.point(inner.cells.indices()[rng.random_range(0..inner.cells.len())]))
        .collect();
    let pst = inclusion_exclusion_check(u, x0, hmax / 2.0, 0.25, 0.5, p1, 0.0, &x1s)?;

    let spacing = grid.max_spacing();
    let dists: Vec<f64> = (0..6).map(|k| 16.0 * spacing * 0.5f64.powi(k)).filter(|&d| d >= spacing).collect();
    let pairs = sample_pairs(u, &half, &dists, 120, seed ^ 0x5eed);
    let c1 = estimate_c1alpha(u, &pairs)?;

    let k = 2.0 * theta0 * theta0;
    let subs: Vec<(Vec<f64>, f64)> = (0..4)
        .map(|_| (grid.point(inner.cells.indices()[rng.random_range(0..inner.cells.len())]), hmin / k.max(1.0)))
        .collect();
    let k_hat = estimate_k_hat(u, x0, hmax / 4.0, k, &subs).unwrap_or(f64::NAN);

    Ok(GeometryConstants {
        theta0: Measured::new(theta0, sweep, "engulfing sup over section pairs"),
        mu: Measured::new(mu, sweep, "log-log fit of section radius"),
        p1: Measured::new(p1, sweep, "(n+1)/mu"),
        c0: Measured::new(pst.c0_inclusion.min(pst.c0_exclusion), sweep, "largest admissible inclusion coefficient"),
        k: Measured::new(k, sweep, "2 theta0^2"),
        k_hat: Measured::new(k_hat, sweep, "largest needed outer dilation"),
        alpha_star: Measured::new(c1.alpha_star, sweep, "log-log fit of gradient differences"),
    })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;
    use std::sync::Arc;

    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

    use super::*;
    use crate::geometry::{CosinePerturbed, QuadraticForm, RadialPotential, SharedFunction};

    fn potential(f: SharedFunction, hw: f64, nodes: usize) -> Potential {
        Potential::analytic(Grid::centered(f.dim(), hw, nodes).unwrap(), f).unwrap()
    }

    #[test]
    fn quadratic_section_is_a_ball() {
        let u = potential(Arc::new(QuadraticForm::identity(2)), 1.5, 121);
        let s = section(&u, &[0.2, -0.1], 0.2).unwrap();
        let r = (2.0f64 * 0.2).sqrt();
        let g = u.grid();
        for i in 0..g.len() {
            let d = dist(&g.point(i), &[0.2, -0.1]);
            if (d - r).abs() < 1e-9 {
                continue;
            }
            let inside = d < r;
            assert_eq!(inside, s.cells.contains(i), "node {:?}", g.point(i));
        }
        assert!(s.compactly_contained);
        assert_eq!(convexity_defects(g, &s.cells, 200, 1), 0);
    }

    #[test]
    fn eccentric_section_semi_axes() {
        let s4 = 4.0;
        let h = 0.1;
        let u = potential(Arc::new(QuadraticForm::eccentric(2, s4)), 1.5, 301);
        let s = section(&u, &[0.0, 0.0], h).unwrap();
        let g = u.grid();
        let (mut ax, mut ay) = (0.0f64, 0.0f64);
        for c in s.cells.iter() {
            let p = g.point(c);
            ax = ax.max(p[0].abs());
            ay = ay.max(p[1].abs());
        }
        assert!((ax - (2.0 * h * s4).sqrt()).abs() <= g.spacing()[0]);
        assert!((ay - (2.0 * h / s4).sqrt()).abs() <= g.spacing()[1]);
    }

    #[test]
    fn rejects_nonpositive_height() {
        let u = potential(Arc::new(QuadraticForm::identity(2)), 1.0, 21);
        assert!(section(&u, &[0.0, 0.0], 0.0).is_err());
        assert!(matches!(section(&u, &[2.0, 0.0], 0.1), Err(SectionError::Geometry(_))));
    }

    #[test]
    fn large_section_is_not_contained() {
        let u = potential(Arc::new(QuadraticForm::identity(2)), 1.0, 21);
        assert!(!section(&u, &[0.0, 0.0], 2.0).unwrap().compactly_contained);
        assert!(volume_ratio_sweep(&u, &[0.0, 0.0], &[0.1, 2.0]).is_err());
    }

    #[test]
    fn ball_volume_ratio_is_two_pi() {
        let u = potential(Arc::new(QuadraticForm::identity(2)), 1.0, 401);
        let sw = volume_ratio_sweep(&u, &[0.0, 0.0], &[0.05, 0.1, 0.2]).unwrap();
        for r in &sw.rows {
            assert!((r.ratio / (2.0 * PI) - 1.0).abs() < 0.02, "{r:?}");
        }
    }

    #[test]
    fn radial_volume_band_is_bounded() {
        let u = potential(Arc::new(RadialPotential::new(2, 0.5, 1.5)), 1.5, 201);
        let hs: Vec<f64> = (0..6).map(|k| 0.5 * 0.5f64.powi(k)).collect();
        let sw = volume_ratio_sweep(&u, &[0.0, 0.0], &hs).unwrap();
        assert!(sw.band() <= 4.0, "band {}", sw.band());
    }

    #[test]
    fn engulfing_for_balls_approaches_four() {
        let u = potential(Arc::new(QuadraticForm::identity(2)), 1.5, 201);
        let e = estimate_engulfing(&u, &[(vec![0.0, 0.0], 0.2)]).unwrap();
        assert!(e.theta0 <= 4.0 + 1e-9 && e.theta0 > 3.7, "{}", e.theta0);
        // Eccentric quadratics are affine images of the ball case.
        let v = potential(Arc::new(QuadraticForm::eccentric(2, 4.0)), 1.5, 201);
        let ev = estimate_engulfing(&v, &[(vec![0.0, 0.0], 0.05)]).unwrap();
        assert!(ev.theta0 <= 4.0 + 1e-9 && ev.theta0 > 3.6, "{}", ev.theta0);
    }

    #[test]
    fn size_exponent_of_quadratic_is_one_half() {
        let u = potential(Arc::new(QuadraticForm::identity(2)), 1.0, 401);
        let hs: Vec<f64> = (0..6).map(|k| 0.2 * 0.5f64.powi(k)).collect();
        let fit = estimate_size_exponent(&u, &[vec![0.0, 0.0]], &hs).unwrap();
        assert!((fit.mu - 0.5).abs() < 0.05, "{}", fit.mu);
        assert!(matches!(
            estimate_size_exponent(&u, &[vec![0.0, 0.0]], &[0.1]),
            Err(SectionError::Fit(FitError::FitDegenerate { .. }))
        ));
    }

    #[test]
    fn inclusion_on_disk_matches_closed_form() {
        let u = potential(Arc::new(QuadraticForm::identity(2)), 1.5, 301);
        let (t, r, s, p1) = (0.5, 0.25, 0.5, 6.0);
        let x1 = vec![0.25, 0.0];
        let rep = inclusion_exclusion_check(&u, &[0.0, 0.0], t, r, s, p1, 0.0, &[x1]).unwrap();
        // Distance from x1 to the sphere of radius sqrt(2 s t), squared over 2.
        let hstar = ((2.0f64 * s * t).sqrt() - 0.25).powi(2) / 2.0;
        let closed = hstar / ((s - r).powf(p1) * t);
        assert!(rep.inclusion_samples == 1);
        assert!((rep.c0_inclusion / closed - 1.0).abs() < 0.05, "{} vs {closed}", rep.c0_inclusion);
        // Equal radii: inclusion trivially true.
        let eq = inclusion_exclusion_check(&u, &[0.0, 0.0], t, s, s, p1, 1e9, &[vec![0.1, 0.0]]).unwrap();
        assert!(eq.inclusion_holds);
    }

    #[test]
    fn exclusion_on_eccentric_random_points() {
        let u = potential(Arc::new(QuadraticForm::eccentric(2, 4.0)), 2.5, 251);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (t, r, s) = (0.3, 0.25, 0.5);
        let t0 = Tilt::at_point(&u, &[0.0, 0.0]).unwrap();
        let mut x1s = Vec::new();
        while x1s.len() < 100 {
            let x = vec![rng.random_range(-1.6..1.6), rng.random_range(-0.4..0.4)];
            let b = t0.bracket_point(&u, &x);
            if b >= s * t && b < t {
                x1s.push(x);
            }
        }
        let rep = inclusion_exclusion_check(&u, &[0.0, 0.0], t, r, s, 6.0, 1.0, &x1s).unwrap();
        assert_eq!(rep.exclusion_samples, 100);
        assert!(rep.c0_exclusion > 0.0);
        assert!(rep.exclusion_holds);
    }

    #[test]
    fn c1alpha_of_quadratic_is_one() {
        let u = potential(Arc::new(QuadraticForm::eccentric(2, 2.0)), 1.0, 101);
        let s = section(&u, &[0.0, 0.0], 0.2).unwrap();
        let pairs = sample_pairs(&u, &s, &[0.01, 0.02, 0.04, 0.08], 80, 3);
        let fit = estimate_c1alpha(&u, &pairs).unwrap();
        assert!((fit.alpha_star - 1.0).abs() < 1e-9, "{}", fit.fitted_slope);
        let one: Vec<_> = pairs.iter().filter(|(x, y)| (dist(x, y) - 0.02).abs() < 1e-12).cloned().collect();
        assert!(estimate_c1alpha(&u, &one).is_err());
    }

    #[test]
    fn c1alpha_of_cosine_perturbation() {
        let u = potential(Arc::new(CosinePerturbed::new(2, 0.3, 4.0)), 1.0, 101);
        let s = section(&u, &[0.0, 0.0], 0.3).unwrap();
        let pairs = sample_pairs(&u, &s, &[0.005, 0.01, 0.02, 0.04, 0.08], 400, 5);
        let fit = estimate_c1alpha(&u, &pairs).unwrap();
        assert!((0.9..=1.0).contains(&fit.alpha_star), "{}", fit.alpha_star);
    }

    #[test]
    fn k_consistency_on_intersecting_pairs() {
        let u = potential(Arc::new(CosinePerturbed::new(2, 0.3, 3.0)), 1.5, 121);
        let theta = estimate_engulfing(&u, &[(vec![0.0, 0.0], 0.1), (vec![0.2, 0.1], 0.05)]).unwrap().theta0;
        let k = 2.0 * theta * theta;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut checked = 0;
        for _ in 0..40 {
            let x1 = vec![rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)];
            let x2 = vec![rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)];
            let h1 = rng.random_range(0.005..0.02);
            let h2 = rng.random_range(0.5 * h1..2.0 * h1);
            let s1 = section(&u, &x1, h1).unwrap();
            let s2 = section(&u, &x2, h2).unwrap();
            if !s1.cells.intersects(&s2.cells) {
                continue;
            }
            let big = section(&u, &x1, k * h1).unwrap();
            assert!(s2.cells.is_subset(&big.cells));
            checked += 1;
        }
        assert!(checked > 5);
    }

    #[test]
    fn geometry_constants_for_quadratic() {
        let u = potential(Arc::new(QuadraticForm::identity(2)), 1.5, 161);
        let hs: Vec<f64> = (0..7).map(|k| 0.4 * 0.5f64.powi(k)).collect();
        let gc = measure_geometry_constants(&u, &[0.0, 0.0], &hs, 1).unwrap();
        assert!(gc.theta0.value > 2.0 && gc.theta0.value <= 4.0 + 1e-9);
        assert!(gc.mu.value > 0.4 && gc.mu.value < 1.0);
        assert!((gc.p1.value - 3.0 / gc.mu.value).abs() < 1e-12);
        assert_eq!(gc.k.value, gc.covering_k());
        assert!((gc.alpha_star.value - 1.0).abs() < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn sections_are_monotone_in_height(
            x in -0.3f64..0.3, y in -0.3f64..0.3, h1 in 0.01f64..0.2, dh in 0.0f64..0.2, eta in 0.0f64..0.5,
        ) {
            let u = potential(Arc::new(CosinePerturbed::new(2, eta, 3.0)), 1.0, 41);
            let t = Tilt::at_point(&u, &[x, y]).unwrap();
            let a = section_with_tilt(&u, t.clone(), h1).unwrap();
            let b = section_with_tilt(&u, t, h1 + dh).unwrap();
            prop_assert!(a.cells.is_subset(&b.cells));
            prop_assert!(a.measure > 0.0 || h1 < 1e-3);
        }

        #[test]
        fn pullback_sections_match_mapped_sections(
            a in 0.5f64..2.0, b in -0.5f64..0.5, c in 0.5f64..2.0, h in 0.02f64..0.1,
        ) {
            // Section of q∘T equals T^{-1}(section of q) for quadratic q, T = [[a,b],[0,c]].
            use nalgebra::{DMatrix, DVector};
            use crate::geometry::Pullback;
            let q: SharedFunction = Arc::new(QuadraticForm::identity(2));
            let m = DMatrix::from_row_slice(2, 2, &[a, b, 0.0, c]);
            let pb: SharedFunction = Arc::new(Pullback::new(q.clone(), m.clone(), DVector::zeros(2), 1.0));
            let u = potential(pb, 1.0, 61);
            let s = section(&u, &[0.0, 0.0], h).unwrap();
            let g = u.grid();
            let mut mismatched = 0;
            for i in 0..g.len() {
                let p = g.point(i);
                let tp = &m * DVector::from_column_slice(&p);
                let inside = q.value(tp.as_slice()) < h;
                if inside != s.cells.contains(i) {
                    mismatched += 1;
                }
            }
            prop_assert_eq!(mismatched, 0);
        }
    }
}
