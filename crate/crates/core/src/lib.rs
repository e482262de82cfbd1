//! Radial-basis-function interpolation with hierarchical-matrix compression.
//!
//! The crate assembles the saddle-point system of an RBF interpolation
//! problem (thin-plate spline or Matern kernel plus a low-degree polynomial
//! part), builds a geometrically balanced cluster tree and sparse block
//! partition over the interpolation points, and provides
//!
//! * blockwise truncated-SVD compression of dense matrices into the
//!   H-matrix format, with matvec, storage accounting and serialization,
//! * an H-Cholesky factorization with rank re-truncation after every
//!   formatted update, plus triangular solves and an approximate inverse,
//! * a dense oracle (LU with optional compensated double-double
//!   elimination) that inverts the saddle matrix exactly and measures the
//!   blockwise singular-value decay of the main inverse block, and
//! * an end-to-end solver for the interpolation problem with energy and
//!   residual diagnostics.

pub mod assembly;
pub mod clustering;
pub mod dd;
pub mod error;
pub mod geometry;
pub mod hmatrix;
pub mod kernels;
pub mod oracle;
pub mod polybasis;
pub mod solver;
mod svd;

pub use error::{Error, Result};
pub use geometry::{AxisBox, Point, PointCloud};
pub use kernels::{KernelConfig, KernelFamily, KernelSpec};
