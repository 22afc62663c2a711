//! Simulation and analysis toolkit for a temperature-insensitive SPDC
//! photon-pair source built around a "perfect" (fixed-radius) ring.
//!
//! The chain runs crystal dispersion → phase matching → ring profile →
//! axicon/lens transform → fiber collection, with a separate polarization
//! analysis stack and a time-tag coincidence counter.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod error;
pub mod par;

pub mod cli;
pub mod collection;
pub mod config;
pub mod dispersion;
pub mod fourier;
pub mod perfectring;
pub mod phasematch;
pub mod polarization;
pub mod timetag;

pub use error::{Error, Result};
