//! Numerical construction of Riemann maps of simply connected planar domains
//! onto the unit disk, and of weak-conformal maps of simply connected 3D
//! domains onto the unit ball.
//!
//! The map is built from the Green's function of the domain: the gradient
//! flow of `G(., pole)` is integrated as a dynamical system whose exact first
//! integral calibrates a flow parameter `t`, every interior point acquires a
//! unit exit direction `a(x)` at the pole, and the image is `a(x)` scaled by
//! a modulus derived from `G` (2D) or from a weighted arc length along the
//! flow curve (3D). The [`analysis`] module provides the differential
//! diagnostics (metric tensors, conformality residuals, dilatation,
//! critical-point scans) used to verify the conformality class of the
//! constructed maps.
//!
//! Module layout:
//! - [`geometry`]: star-shaped domain specifications, boundary sampling.
//! - [`green`]: Green's-function backends (analytic disk/ball, MFS).
//! - [`flow`]: gradient-flow tracing, level-set flux, weighted lengths.
//! - [`mapping`]: assembling the disk/ball maps from traces.
//! - [`analysis`]: Jacobians, eigenvalue criteria, harmonic-gradient bound,
//!   critical-point scans.
//! - [`grids`]: interior evaluation grids shared by the CLI and tests.

pub mod analysis;
pub mod flow;
pub mod geometry;
pub mod green;
pub mod grids;
pub mod mapping;
pub(crate) mod numeric;

pub use geometry::{BoundaryNode, DomainKind, DomainSpec, GeometryError, Point};
pub use green::{GreenError, GreenField, SolverParams};
