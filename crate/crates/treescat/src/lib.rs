//! Stationary scattering theory for adjacency operators on regular trees.
//!
//! The crate computes, in closed form where one exists and by small exact
//! linear systems otherwise, the spectral theory of `A = A0 + W` on the
//! (q+1)-regular tree: the free Green's function and density of states, the
//! plane-wave (Fourier–Helgason) transform and its deformation by a finite
//! non-local potential `W`, generalized eigenfunctions via the
//! Lippmann–Schwinger equation, embedded and outside point spectrum,
//! T/S-matrices and transmission coefficients (by wave asymptotics and,
//! independently, by a Dirichlet-to-Neumann reduction), and scattered-wave
//! correlations. A combinatorial surgery module embeds any graph that is
//! regular-tree-like outside a finite core into a finite edge-edit of the
//! tree, reducing its spectral theory to the same machinery.

pub mod diag;
pub mod dtn;
pub mod error;
pub mod free;
pub mod potential;
pub mod quad;
pub mod scattering;
pub mod surface;
pub mod surgery;
pub mod tree;

pub use error::{Error, Result};
pub use potential::NonlocalPotential;
pub use surface::{SpectralParam, Surface};
pub use tree::{FiniteGraph, RayClass, TruncatedTree, VertexId};
