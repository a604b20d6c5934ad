//! Simulation and stability analysis for finite systems of competing Lévy
//! particles: particles on the real line whose drift, diffusion and jumps are
//! assigned by their current rank.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] holds the governing triple (drift, covariance, jump measure)
//!   and the closed-form stability verdict based on effective drifts.
//! * [`ranking`] implements the ranking permutation, gaps and centering.
//! * [`engine`] simulates named-particle trajectories by piecing together
//!   Euler–Maruyama diffusion segments and Poisson jump epochs.
//! * [`analysis`] computes ergodic statistics and the Lyapunov-drift
//!   diagnostics.
//! * [`cli`] is the batch front-end driven by JSON experiment configs.

// `!(x > 0.0)` is used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod engine;
mod error;
pub mod model;
pub mod ranking;

pub use error::{Error, Result};
