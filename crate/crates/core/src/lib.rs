//! Process-based spatial fusion models.
//!
//! Geostatistical, lattice and point-pattern responses share one or more
//! latent Gaussian processes through a loading matrix `Z`. Latent processes
//! use nearest-neighbor Gaussian process (NNGP) likelihoods and the joint
//! posterior is explored with a dynamic-trajectory Hamiltonian Monte Carlo
//! sampler.

pub mod cli;
pub mod covariance;
pub mod error;
pub mod geom;
pub mod harness;
pub mod inference;
pub mod latent;
mod linalg;
pub mod model;
pub mod rng;
pub mod special;

pub use error::{Error, Result};
