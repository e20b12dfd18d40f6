//! Uniform tensor grids in one to three dimensions.
//!
//! Nodes sit at `origin + i * spacing` along every axis. Each node stands for
//! one cell whose measure is the product of the spacings, so counting member
//! nodes of a set gives its measure directly.

use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

/// Smallest number of nodes allowed along any axis.
pub const MIN_EXTENT: usize = 8;

/// Multi-index of a node. Unused trailing axes are zero.
pub type MultiIndex = [usize; 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    origin: Vec<f64>,
    spacing: Vec<f64>,
    extents: Vec<usize>,
    strides: Vec<usize>,
}

impl Grid {
    pub fn new(origin: Vec<f64>, spacing: Vec<f64>, extents: Vec<usize>) -> Result<Self, GeometryError> {
        let dim = origin.len();
        if !(1..=3).contains(&dim) || spacing.len() != dim || extents.len() != dim {
            return Err(GeometryError::InvalidGrid(format!(
                "dimension must be 1, 2 or 3 with matching axes (got origin {}, spacing {}, extents {})",
                origin.len(),
                spacing.len(),
                extents.len()
            )));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(GeometryError::InvalidGrid("spacing must be positive".into()));
        }
        if let Some(&e) = extents.iter().find(|&&e| e < MIN_EXTENT) {
            return Err(GeometryError::InvalidGrid(format!(
                "every axis needs at least {MIN_EXTENT} nodes, got {e}"
            )));
        }
        let mut strides = vec![1; dim];
        for k in (0..dim.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * extents[k + 1];
        }
        Ok(Grid { dim, origin, spacing, extents, strides })
    }

    /// Cube `[-half_width, half_width]^dim` with `nodes` nodes per axis, both
    /// end points included. An odd node count puts a node at the origin.
    pub fn centered(dim: usize, half_width: f64, nodes: usize) -> Result<Self, GeometryError> {
        if nodes < 2 {
            return Err(GeometryError::InvalidGrid("need at least two nodes per axis".into()));
        }
        let h = 2.0 * half_width / (nodes - 1) as f64;
        Grid::new(vec![-half_width; dim], vec![h; dim], vec![nodes; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn len(&self) -> usize {
        self.extents.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_measure(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Largest spacing over all axes.
    pub fn max_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(0.0, f64::max)
    }

    /// Length of a cell diagonal.
    pub fn cell_diagonal(&self) -> f64 {
        self.spacing.iter().map(|s| s * s).sum::<f64>().sqrt()
    }

    pub fn index(&self, m: &MultiIndex) -> usize {
        (0..self.dim).map(|k| m[k] * self.strides[k]).sum()
    }

    pub fn multi_index(&self, mut idx: usize) -> MultiIndex {
        let mut m = [0; 3];
        for k in 0..self.dim {
            m[k] = idx / self.strides[k];
            idx %= self.strides[k];
        }
        m
    }

    /// Coordinates of node `idx` written into `out`.
    pub fn point_into(&self, idx: usize, out: &mut [f64]) {
        let m = self.multi_index(idx);
        for k in 0..self.dim {
            out[k] = self.origin[k] + m[k] as f64 * self.spacing[k];
        }
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.dim];
        self.point_into(idx, &mut p);
        p
    }

    /// Upper corner of the bounding box.
    pub fn upper(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|k| self.origin[k] + (self.extents[k] - 1) as f64 * self.spacing[k])
            .collect()
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        let up = self.upper();
        x.len() == self.dim
            && (0..self.dim).all(|k| {
                let tol = 1e-12 * self.spacing[k];
                x[k] >= self.origin[k] - tol && x[k] <= up[k] + tol
            })
    }

    /// Number of nodes between `idx` and the nearest grid face.
    pub fn edge_distance(&self, idx: usize) -> usize {
        let m = self.multi_index(idx);
        (0..self.dim)
            .map(|k| m[k].min(self.extents[k] - 1 - m[k]))
            .min()
            .unwrap_or(0)
    }

    /// Node nearest to `x`, if `x` lies in the bounding box.
    pub fn nearest(&self, x: &[f64]) -> Option<usize> {
        if !self.contains_point(x) {
            return None;
        }
        let mut m = [0; 3];
        for k in 0..self.dim {
            let t = ((x[k] - self.origin[k]) / self.spacing[k]).round();
            m[k] = (t.max(0.0) as usize).min(self.extents[k] - 1);
        }
        Some(self.index(&m))
    }

    /// Neighbor along `axis` at signed offset `step`, if inside the grid.
    pub fn offset(&self, idx: usize, axis: usize, step: isize) -> Option<usize> {
        let m = self.multi_index(idx);
        let j = m[axis] as isize + step;
        if j < 0 || j >= self.extents[axis] as isize {
            return None;
        }
        Some((idx as isize + step * self.strides[axis] as isize) as usize)
    }

    /// Node displaced by a full multi-offset, if inside the grid.
    pub fn shift(&self, idx: usize, delta: &[isize]) -> Option<usize> {
        let m = self.multi_index(idx);
        let mut out = 0isize;
        for k in 0..self.dim {
            let j = m[k] as isize + delta[k];
            if j < 0 || j >= self.extents[k] as isize {
                return None;
            }
            out += j * self.strides[k] as isize;
        }
        Some(out as usize)
    }

    /// Face neighbors (2·dim at most).
    pub fn face_neighbors(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.dim).flat_map(move |k| {
            [-1isize, 1].into_iter().filter_map(move |s| self.offset(idx, k, s))
        })
    }

    /// All offsets of the 3^dim stencil excluding the center.
    pub fn stencil_offsets(&self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        let r = |k: usize| if k < self.dim { -1..=1 } else { 0..=0 };
        for a in r(0) {
            for b in r(1) {
                for c in r(2) {
                    if a != 0 || b != 0 || c != 0 {
                        out.push([a, b, c]);
                    }
                }
            }
        }
        out
    }

    /// Multilinear interpolation of a node field with `comps` interleaved
    /// components. Points outside the box are clamped onto it.
    pub fn interpolate(&self, data: &[f64], comps: usize, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(data.len(), self.len() * comps);
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for k in 0..self.dim {
            let t = (x[k] - self.origin[k]) / self.spacing[k];
            let t = t.clamp(0.0, (self.extents[k] - 1) as f64);
            let i = (t.floor() as usize).min(self.extents[k] - 2);
            base[k] = i;
            frac[k] = t - i as f64;
        }
        out[..comps].iter_mut().for_each(|o| *o = 0.0);
        for corner in 0..(1usize << self.dim) {
            let mut w = 1.0;
            let mut m = base;
            for k in 0..self.dim {
                if corner >> k & 1 == 1 {
                    m[k] += 1;
                    w *= frac[k];
                } else {
                    w *= 1.0 - frac[k];
                }
            }
            if w == 0.0 {
                continue;
            }
            let i = self.index(&m) * comps;
            for c in 0..comps {
                out[c] += w * data[i + c];
            }
        }
    }

    pub fn interpolate_scalar(&self, data: &[f64], x: &[f64]) -> f64 {
        let mut v = [0.0];
        self.interpolate(data, 1, x, &mut v);
        v[0]
    }

    /// Samples `f` at every node.
    pub fn sample<F: Fn(&[f64]) -> f64>(&self, f: F) -> Vec<f64> {
        let mut p = vec![0.0; self.dim];
        (0..self.len())
            .map(|i| {
                self.point_into(i, &mut p);
                f(&p)
            })
            .collect()
    }

    /// Same geometry, `factor` times finer spacing (node count scaled to keep the box).
    pub fn refined(&self, factor: usize) -> Grid {
        let extents = self.extents.iter().map(|&e| (e - 1) * factor + 1).collect();
        let spacing = self.spacing.iter().map(|&s| s / factor as f64).collect();
        Grid::new(self.origin.clone(), spacing, extents).expect("refinement of a valid grid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_roundtrip() {
        let g = Grid::new(vec![0.0; 3], vec![0.1, 0.2, 0.3], vec![8, 9, 10]).unwrap();
        for idx in [0, 1, 17, 300, g.len() - 1] {
            assert_eq!(g.index(&g.multi_index(idx)), idx);
        }
        assert!((g.cell_measure() - 0.006).abs() < 1e-15);
    }

    #[test]
    fn rejects_small_or_bad_grids() {
        assert!(Grid::new(vec![0.0; 2], vec![0.1; 2], vec![7, 8]).is_err());
        assert!(Grid::new(vec![0.0; 2], vec![0.0, 0.1], vec![8, 8]).is_err());
        assert!(Grid::new(vec![0.0; 4], vec![0.1; 4], vec![8; 4]).is_err());
    }

    #[test]
    fn centered_odd_has_origin_node() {
        let g = Grid::centered(2, 1.0, 21).unwrap();
        let i = g.nearest(&[0.0, 0.0]).unwrap();
        assert_eq!(g.point(i), vec![0.0, 0.0]);
        assert_eq!(g.edge_distance(i), 10);
    }

    #[test]
    fn interpolation_reproduces_bilinear() {
        let g = Grid::centered(2, 1.0, 11).unwrap();
        let data = g.sample(|p| 1.0 + 2.0 * p[0] - p[1] + 0.5 * p[0] * p[1]);
        let x = [0.13, -0.41];
        let v = g.interpolate_scalar(&data, &x);
        let exact = 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1];
        assert!((v - exact).abs() < 1e-12);
    }

    #[test]
    fn neighbors_stay_inside() {
        let g = Grid::centered(2, 1.0, 9).unwrap();
        assert_eq!(g.face_neighbors(0).count(), 2);
        assert_eq!(g.face_neighbors(g.index(&[4, 4, 0])).count(), 4);
        assert_eq!(g.stencil_offsets().len(), 8);
    }
}
