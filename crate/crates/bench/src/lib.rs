//! Benchmark fixtures shared by the criterion targets.

use std::sync::Arc;

use lma_core::geometry::QuadraticForm;
use lma_core::{Grid, Potential};

/// `|x|²/2` on a centered square grid.
pub fn quadratic(half_width: f64, nodes: usize) -> Arc<Potential> {
    let grid = Grid::centered(2, half_width, nodes).expect("grid");
    Arc::new(Potential::analytic(grid, Arc::new(QuadraticForm::identity(2))).expect("potential"))
}
