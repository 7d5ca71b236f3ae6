//! Regression and classification on SPD covariance matrices through the
//! tangent space of the affine-invariant geometry, with recovery of
//! interpretable channel-space patterns from fitted linear models.

pub mod covariance;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod format;
pub mod linmodel;
pub mod manifold;
pub mod patterns;
pub mod pipelines;
pub mod rng;
pub mod simulation;

pub use error::{Error, Result};
