//! Core of the trajectory-prediction falsification platform.
//!
//! Everything in this crate is pure computation over `alloc` data
//! structures: parametric road networks, the `.tsc` scenario language,
//! the fixed-step kinematic simulator, built-in predictors, evaluation
//! metrics and the sampler-driven falsification loop. File formats,
//! external predictor processes and the parallel runner live in the
//! `trajfals` crate.
#![cfg_attr(not(test), no_std)]
#![warn(rust_2018_idioms, unused_qualifications)]

extern crate alloc;

pub mod falsify;
pub mod geom;
pub mod lang;
pub mod metrics;
pub mod pipeline;
pub mod predict;
pub mod road;
pub mod sim;

/// Simulation and data sample period in seconds (10 Hz).
pub const DT: f64 = 0.1;
/// Number of history steps handed to a predictor.
pub const HISTORY_STEPS: usize = 20;
/// Default prediction horizon in steps.
pub const HORIZON_STEPS: usize = 15;
/// Default number of candidate trajectories per prediction.
pub const DEFAULT_K: usize = 6;
