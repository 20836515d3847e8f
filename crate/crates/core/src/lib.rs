//! Compressed error-feedback zeroth-order online optimisation, with
//! multi-agent tracking and coverage simulations built on top.

pub mod compressors;
pub mod coverage;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod optimizers;
pub mod rng;
pub mod sim;
pub mod synthetic;
pub mod tracking;
pub mod zo;

pub use error::{Error, Result};
