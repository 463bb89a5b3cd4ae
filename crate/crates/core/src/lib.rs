//! Numerical laboratory for recovering a potential q from the Dirichlet-to-Neumann map of −Δ + q
//! on the cylinder [0, L₁] × unit disk, following the complex-geometric-optics reconstruction.

pub mod carleman;
pub mod config;
pub mod cgo;
pub mod error;
pub mod forward;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod pipeline;
pub mod quasimodes;
pub mod raytransform;
pub mod traces;
pub mod sparse;

pub use error::{Error, Result};
pub use num_complex::Complex64;
