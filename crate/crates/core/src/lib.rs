//! Numerical laboratory for the magnetic Schrödinger equation
//! `−i∂ₜu − Δ_A u + ρu = 0`: a Crank–Nicolson forward solver, the Carleman
//! weight machinery with empirical checks of the global estimate, and the
//! three Lipschitz-stability measurement protocols.

pub mod banded;
pub mod carleman;
pub mod convergence;
pub mod error;
pub mod exec;
pub mod grid;
pub mod manifest;
pub mod runner;
pub mod solver;
pub mod stability;
pub mod weight;

pub use num_complex::Complex64 as C64;

pub use error::{Error, Result};
pub use exec::Execution;
pub use grid::{BoundarySubset, ComplexField, RealField, RealVectorField, SpaceTimeField, SpaceTimeGrid};
