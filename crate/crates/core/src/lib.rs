//! Streaming detection of an emerging low-rank component in the covariance of
//! high-dimensional Gaussian observations.
//!
//! The crate is organized bottom-up:
//!
//! - [`numerics`]: dense symmetric linear algebra (Jacobi, Lanczos, Gram-Schmidt).
//! - [`model`]: observation streams, pre/post-change generators, stream files.
//! - [`detector`]: the sliding-window maximum-eigenvalue stopping rule.
//! - [`cusum`]: epsilon-nets on the sphere and per-direction chi-square CUSUMs.
//! - [`sketch`]: random orthonormal sketching operators.
//! - [`tracker`]: GROUSE subspace tracking with missing data.
//! - [`analysis`]: closed-form ARL lower bound and EDD approximation.
//! - [`harness`]: Monte Carlo ARL/EDD estimation, threshold calibration and sweeps.

pub mod analysis;
pub mod cusum;
pub mod detector;
mod error;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod sketch;
pub mod tracker;

pub use error::{Error, Result};
