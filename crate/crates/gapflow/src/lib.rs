//! Spectral toolkit for Schrödinger operators on a discretized tube
//! ℝ × (ℝ/ℤ) with dislocated potentials.

pub mod config;
pub mod decay;
pub mod eigensolve;
pub mod experiments;
pub mod error;
pub mod floquet;
pub mod gap;
pub mod greens;
pub mod ids;
pub mod grid;
pub mod linalg;
pub mod operator;
pub mod output;
pub mod par;
pub mod potential;
pub mod quad;
pub mod transform;
pub mod verify;

pub use error::{Error, Result};
