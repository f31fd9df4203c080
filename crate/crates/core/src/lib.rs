//! Simulator and verification lab for the stochastic wave equation
//! u_tt = Laplace u + sigma(u) L' in dimensions 1 and 2, driven by a
//! truncated Levy space-time noise.

// NaN-rejecting guards are written as !(x > 0.0) throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod levy_noise;
pub mod quad;
pub mod report;
pub mod rng;
pub mod sobolev;
pub mod solver;
pub mod special;
pub mod verification;
pub mod wave_kernel;

pub use error::{Error, Result};
