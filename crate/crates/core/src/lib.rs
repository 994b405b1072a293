//! Reduced-basis approximation of the parametrized Maxwell cavity
//! eigenproblem with tree-cotree gauging.
//!
//! The pipeline runs bottom-up through the modules:
//!
//! - [`mesh`]: structured hexahedral brick meshes and the discrete gradient.
//! - [`assembly`]: edge-element curl-curl stiffness and mass matrices, and the
//!   convex interpolation between two endpoint geometries.
//! - [`gauge`]: spanning tree / cotree split, the cotree operator H and the
//!   dense cotree system, plus transformations between full and cotree
//!   coordinates.
//! - [`eigen`]: sparse shift-invert and dense generalized eigensolvers and the
//!   SPD solve contract.
//! - [`rb`]: POD initialization, greedy enrichment, factored reduced
//!   matrices for the mixed and classical gauges.
//! - [`tracking`]: correlation-based mode tracking along the parameter.

pub mod assembly;
pub mod eigen;
pub mod error;
pub mod factor;
pub mod gauge;
pub mod mesh;
pub mod mmio;
pub mod par;
pub mod rb;
pub mod sparse;
pub mod tracking;

pub use assembly::{assemble, brick_eigenvalues, ParametrizedSystem, SystemPair};
pub use eigen::{solve_dense_gevp, solve_sparse_gevp, EigenSolution, SparseSolverOptions};
pub use error::{Error, Result};
pub use gauge::{CotreeOperator, CotreeSystem, GaugeDecomposition, GaugedPencil, ProjectionMethod};
pub use mesh::{CavityMesh, DiscreteGradient};
pub use sparse::CsrMatrix;
