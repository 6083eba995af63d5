//! Weak KAM solutions, Green bundles and Lax-Oleinik solvers for Tonelli Hamiltonians on tori.

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod green;
pub mod lo_solver;
pub mod pendulum_oracle;
pub mod semiconcave;

pub use error::{Error, Result};
