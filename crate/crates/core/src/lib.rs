//! Numerical toolkit for the restricted planar four-body problem built as a
//! quasi-periodic perturbation of the restricted planar circular three-body
//! problem (RPC3BP).
//!
//! The crate computes the full chain of objects behind the energy-diffusion
//! mechanism: collinear Lagrangian points and their saddle-center
//! linearizations, Lyapunov orbit families around L1/L2, stable/unstable
//! manifolds and their heteroclinic intersections, the large resonant planet
//! orbit, the perturbed asteroid Hamiltonian, and the averaged energy-growth
//! dynamics together with a direct diffusion simulation.

pub mod coords;
pub mod dynamics;
pub mod equilibria;
pub mod error;
pub mod fourbody;
pub mod lyapunov;
pub mod manifolds;
pub mod ode;
pub mod planet;

pub use error::{Error, Result};
