//! Numerical verification of the Gaussian (NNGP) limit of wide, randomly
//! initialized fully connected networks.
//!
//! The library computes the limiting kernel recursion on a finite input set,
//! samples finite-width networks, estimates the quadratic Wasserstein
//! distance between the two output laws with exact-transport estimators, and
//! assembles the explicit per-layer upper bound on that distance, including
//! its Monte Carlo constants.

pub mod activation;
pub mod assignment;
pub mod bound;
pub mod error;
pub mod experiment;
pub mod kernel;
pub mod net;
pub mod plot;
pub mod psd;
pub mod rng;
pub mod samples;
pub mod transport;
pub mod verify;

pub use error::{Error, Result};
