//! Sets of grid cells stored as sorted node indices.

use serde::{Deserialize, Serialize};

use super::grid::Grid;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSet {
    cells: Vec<usize>,
}

impl CellSet {
    pub fn empty() -> Self {
        CellSet { cells: Vec::new() }
    }

    pub fn from_unsorted(mut cells: Vec<usize>) -> Self {
        cells.sort_unstable();
        cells.dedup();
        CellSet { cells }
    }

    pub fn from_mask(mask: &[bool]) -> Self {
        CellSet { cells: mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect() }
    }

    pub fn all(grid: &Grid) -> Self {
        CellSet { cells: (0..grid.len()).collect() }
    }

    pub fn to_mask(&self, len: usize) -> Vec<bool> {
        let mut m = vec![false; len];
        for &c in &self.cells {
            m[c] = true;
        }
        m
    }

    pub fn indices(&self) -> &[usize] {
        &self.cells
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.cells.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.cells.binary_search(&idx).is_ok()
    }

    pub fn measure(&self, grid: &Grid) -> f64 {
        self.cells.len() as f64 * grid.cell_measure()
    }

    pub fn intersects(&self, other: &CellSet) -> bool {
        let (mut i, mut j) = (0, 0);
        while i < self.cells.len() && j < other.cells.len() {
            match self.cells[i].cmp(&other.cells[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => return true,
            }
        }
        false
    }

    pub fn intersection(&self, other: &CellSet) -> CellSet {
        CellSet { cells: self.cells.iter().copied().filter(|&c| other.contains(c)).collect() }
    }

    pub fn is_subset(&self, other: &CellSet) -> bool {
        self.first_outside(other).is_none()
    }

    /// First member of `self` that is not in `other`.
    pub fn first_outside(&self, other: &CellSet) -> Option<usize> {
        self.cells.iter().copied().find(|&c| !other.contains(c))
    }

    pub fn union(&self, other: &CellSet) -> CellSet {
        let mut v = Vec::with_capacity(self.len() + other.len());
        v.extend_from_slice(&self.cells);
        v.extend_from_slice(&other.cells);
        CellSet::from_unsorted(v)
    }

    pub fn difference(&self, other: &CellSet) -> CellSet {
        CellSet { cells: self.cells.iter().copied().filter(|&c| !other.contains(c)).collect() }
    }

    /// Non-members that share a face with a member.
    pub fn outer_ring(&self, grid: &Grid) -> CellSet {
        let mask = self.to_mask(grid.len());
        let mut ring = Vec::new();
        for &c in &self.cells {
            for nb in grid.face_neighbors(c) {
                if !mask[nb] {
                    ring.push(nb);
                }
            }
        }
        CellSet::from_unsorted(ring)
    }

    /// Members with a face neighbor outside the set or on the grid edge.
    pub fn inner_layer(&self, grid: &Grid) -> CellSet {
        let mask = self.to_mask(grid.len());
        CellSet {
            cells: self
                .cells
                .iter()
                .copied()
                .filter(|&c| {
                    grid.edge_distance(c) == 0 || grid.face_neighbors(c).any(|nb| !mask[nb])
                })
                .collect(),
        }
    }

    /// Face-neighbor dilation by `steps` layers.
    pub fn dilate(&self, grid: &Grid, steps: usize) -> CellSet {
        let mut cur = self.clone();
        for _ in 0..steps {
            cur = cur.union(&cur.outer_ring(grid));
        }
        cur
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_algebra() {
        let a = CellSet::from_unsorted(vec![5, 1, 3, 3]);
        let b = CellSet::from_unsorted(vec![3, 4]);
        assert_eq!(a.indices(), &[1, 3, 5]);
        assert!(a.intersects(&b));
        assert_eq!(a.intersection(&b).indices(), &[3]);
        assert_eq!(a.union(&b).indices(), &[1, 3, 4, 5]);
        assert_eq!(a.difference(&b).indices(), &[1, 5]);
        assert!(!a.is_subset(&b));
        assert_eq!(a.first_outside(&b), Some(1));
    }

    #[test]
    fn ring_and_layer_of_single_cell() {
        let g = Grid::centered(2, 1.0, 9).unwrap();
        let c = g.index(&[4, 4, 0]);
        let s = CellSet::from_unsorted(vec![c]);
        assert_eq!(s.outer_ring(&g).len(), 4);
        assert_eq!(s.inner_layer(&g).len(), 1);
        assert_eq!(s.dilate(&g, 2).len(), 13);
    }
}
