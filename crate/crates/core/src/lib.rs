//! Simulation and analysis core for pulsed single-photon Hanbury Brown–Twiss
//! experiments.
//!
//! The crate models `n` independent trapped-ion emitters driven once per
//! experiment cycle, turns their emissions into two-channel detector time tags,
//! and estimates background-corrected second-order correlation `g²(0)` from the
//! resulting coincidence histograms. It also carries the numerical calibration
//! helpers for the excitation laser (pulse energy fit, extinction budget, pulse
//! shape synthesis, shelving-fidelity factorization).
//!
//! All times are integer picoseconds. The crate is `no_std` and only needs
//! `alloc`; file formats, parallel drivers, and the command-line tool live in
//! the `photon-hbt` companion crate.
#![cfg_attr(not(test), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod calibration;
pub mod correlator;
pub mod error;
pub mod experiment;
pub mod measurement;
pub mod rng;
pub mod sampler;
pub mod sequence;
pub mod simcore;
pub mod tagstream;

pub use error::{Error, Result};
pub use measurement::Measured;

/// Picoseconds per second.
pub const PS_PER_S: f64 = 1.0e12;
