//! Finite-time least-squares identification of linear dynamical systems
//! `x(t+1) = A₀x(t) + w(t+1)` in stable, explosive and mixed spectral regimes.

pub mod error;
pub mod linalg;
pub mod noise;
pub mod dynamics;
pub mod estimator;
pub mod bounds;
pub mod spectral;
pub mod harness;

pub use error::{Result, SysIdError};

