//! Stabilized cut finite element method for stationary convection-diffusion
//! on closed surfaces embedded in 3D.
//!
//! The surface is described implicitly and embedded in a structured
//! tetrahedral background mesh. A piecewise planar discrete surface is
//! extracted by marching tetrahedra, the trial space is the restriction of
//! piecewise linears on the cut ("active") tetrahedra, and the discrete
//! problem is stabilized by a streamline diffusion term on the discrete
//! surface plus a normal-gradient penalty on the full active elements.
//!
//! Pipeline, bottom to top:
//!
//! * [`geometry`] — implicit surfaces, closest-point projection, normal
//!   extension, manufactured right-hand sides.
//! * [`mesh`] — background tetrahedral mesh and the active submesh.
//! * [`cut`] — marching-tetrahedra surface extraction, cut-polygon
//!   quadrature and edge adjacency.
//! * [`fem`] — discrete coefficients, stabilization parameters, assembly of
//!   the stabilized stiffness matrix and load vector.
//! * [`solve`] — sparse Krylov / dense direct solvers and condition-number
//!   estimation.
//! * [`analysis`] — error norms, convergence rates, geometry diagnostics.
//! * [`cli`] — configuration files, built-in experiment problems, study
//!   drivers and CSV/VTK output.

pub mod analysis;
pub mod cli;
pub mod cut;
pub mod error;
pub mod fem;
pub mod geometry;
pub mod linalg;
pub mod mesh;
pub mod solve;

pub use error::Error;
pub use geometry::{ClosestPoint, ImplicitSurface, ScalarField, Vec3, VectorField};
pub use mesh::{ActiveMesh, BackgroundMesh, BoundingBox};
