//! Numerical tools for linearized Monge-Ampère equations: sections of convex
//! potentials, John normalization and problem rescaling, sliding-paraboloid
//! contact engines, Monge-Ampère barriers, section coverings, and an
//! experiment harness that checks the resulting estimates on concrete data.

pub mod barriers;
pub mod covering;
pub mod error;
pub mod fit;
pub mod geometry;
pub mod harness;
pub mod normalization;
pub mod sections;
pub mod sliding;

pub use error::*;
pub use geometry::{CellSet, Grid, Potential, SharedFunction, SmoothFunction, StructuralConstants};
