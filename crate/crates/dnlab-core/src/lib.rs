//! Numerical laboratory for Dirichlet-to-Neumann (DN) maps of planar
//! conductivity equations on the unit disc.
//!
//! The pipeline: build a structured polar triangulation ([`mesh`]), pick a
//! conductivity field ([`conductivity`]), assemble and solve the P1 finite
//! element system ([`fem`]), condense it to a DN matrix in the orthonormal
//! boundary Fourier basis and measure fractional Sobolev operator norms
//! ([`dn`]). Closed-form references for radial layered conductivities and
//! laminate homogenization live in [`oracles`]; scripted end-to-end scenarios
//! with machine-readable reports live in [`experiments`].

// Validation guards are written `if !(x > 0.0 && x < 1.0)` so NaN is rejected
// along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Element kernels index several parallel arrays per loop; positional indices
// keep the stencil arithmetic legible.
#![allow(clippy::needless_range_loop)]

pub mod conductivity;
pub mod config;
pub mod dn;
pub mod error;
pub mod experiments;
pub mod fem;
pub mod mesh;
pub mod oracles;

pub use error::{Error, Result};
