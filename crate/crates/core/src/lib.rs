//! Numerical laboratory for the homogenization of boundary obstacle (Signorini) problems.
//!
//! The crate builds ε-scale obstacle sets on the Σ part of the boundary of the unit box, the
//! truncated-fundamental-solution corrector and its stitched variant for general patches, and
//! solves both the ε-scale variational inequality and the homogenized boundary-penalty problem
//! on uniform grids.

pub mod capacity;
pub mod corrector;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod numerics;
pub mod obstacle_field;
pub mod pde;
pub mod registry;

pub use error::{Error, Result};
