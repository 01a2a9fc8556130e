//! Lyapunov-guided test-time self-alignment for offline safe RL on
//! enumerable MDPs.
//!
//! Every sampled estimator in this crate (occupancy, the min-max energy
//! baseline, prompt selection, the escape bound) has an exact dynamic
//! programming or enumeration counterpart so the two can be checked against
//! each other. The crate is `no_std` and only needs `alloc`; file formats,
//! configuration and the command line live in the `sas` companion crate.

#![no_std]
#![warn(missing_debug_implementations)]
// `!(x > 0.0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bounds;
pub mod dataset;
pub mod env;
pub mod error;
pub mod lyapunov;
pub mod math;
pub mod model;
pub mod occupancy;
pub mod rng;
pub mod sas;
pub mod skill;
pub mod world_model;

pub use error::{Error, Result};
