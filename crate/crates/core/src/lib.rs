//! Gauss-Newton fitting of tree-structured articulated models.

pub mod error;
pub mod geometry;
pub mod harness;
pub mod model;
pub mod optimizer;
pub mod residuals;
pub mod solver_dense;
pub mod solver_sparse;

pub use error::{Error, Result};
