//! Kernel-based batch active learning for neural network regression.
//!
//! - [`model`]: fully connected network in the neural tangent parametrization.
//! - [`kernels`]: base kernels from a trained network and transformations on them.
//! - [`selection`]: batch selection methods over a kernel.
//! - [`oracles`]: slow brute-force references used by tests.

pub mod error;
pub mod kernels;
pub mod linalg;
pub mod model;
pub mod oracles;
pub mod seed;
pub mod selection;

pub use error::{Error, Result};
