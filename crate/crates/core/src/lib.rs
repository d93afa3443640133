//! Non-stationary wideband massive-MIMO channel simulator.
//!
//! The BS carries a large uniform linear array; near-field effects are captured
//! with parabolic wavefronts and cluster evolution along the array with a
//! per-cluster Markov visibility chain times a spatially correlated lognormal
//! amplitude. Analytical and Monte-Carlo statistics plus a sliding-window MUSIC
//! angle spectrum are provided for validation.

// negated comparisons double as NaN rejection in argument checks
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod cli;
pub mod config;
pub mod doa;
pub mod error;
pub mod geometry;
pub mod io;
pub mod largescale;
pub mod linalg;
pub mod rng;
pub mod scenario;
pub mod stats;

pub use error::{Error, Result};
