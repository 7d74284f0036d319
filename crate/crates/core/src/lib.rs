//! Analytic and probabilistic machinery for the process `X^a = B + a·Y`
//! (Brownian motion with generator `Δ` plus an independent weighted
//! rotationally symmetric α-stable process).

// `!(x > 0.0)` rejects NaN on purpose; quadrature nodes keep their published digits.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]
pub mod error;
pub mod exit_mc;
pub mod fraclap;
pub mod geometry;
pub mod harness;
pub mod kernels;
pub mod quad;
pub mod rng;
pub mod samplers;
pub mod stats;

pub use error::{Error, Result};
pub use kernels::Params;
