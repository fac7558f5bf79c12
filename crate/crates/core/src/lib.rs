//! Entropy and mass functionals on radially symmetric ALE manifolds.
//!
//! The crate computes the ADM mass, the renormalized Perelman energy
//! `λ_ALE`, the entropies `W`, `μ`, `μ_ALE` and `ν`, explicit test functions
//! for the large-τ expansion of `μ`, and a cohomogeneity-one Ricci flow with
//! the conjugate heat flow and the dynamical `λ` functional.

pub mod cli;
pub mod config;
pub mod fit;
pub mod flow;
pub mod functionals;
pub mod gauge;
pub mod geometry;
pub mod grid;
pub mod jet;
pub mod quad;
pub mod radial;
pub mod testfn;

pub use functionals::FunctionalReport;
pub use geometry::{Core, GeometryModel};
pub use radial::{Radial, RadialFunction};
