//! Variational shape from shading under second-order spherical-harmonics
//! illumination, without any smoothness regularizer, plus a multi-view
//! extension that couples several depth maps through sparse pixel
//! correspondences.
//!
//! The crate is organized around a masked pixel grid:
//!
//! * [`geometry`] holds camera models and the map from depth gradients to
//!   unit normals.
//! * [`shading`] evaluates the spherical-harmonics image formation model and
//!   the per-pixel PDE coefficient fields it induces.
//! * [`gradient`] builds the masked finite-difference gradient operator that
//!   both the renderer and the solvers share.
//! * [`solver`] contains the ADMM solver for a single view and a frozen
//!   coefficient fixed-point baseline.
//! * [`multiview`] couples several views through backprojection consistency
//!   at matched pixels.
//! * [`synth`] and [`metrics`] generate synthetic test scenes and score
//!   reconstructions; [`io`] reads and writes all on-disk formats and backs
//!   the command line interface.

pub mod error;
pub mod geometry;
pub mod gradient;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod multiview;
pub mod shading;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
