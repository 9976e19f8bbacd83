//! Sparse linear Sarsa(lambda) agents driven by binary features extracted
//! from 160x210 palette screens.
//!
//! The crate is organised around a pipeline:
//!
//! * [`screen`] — frames, palette mapping, background models.
//! * [`features`] — presence grids and the basic / pairwise-offset /
//!   temporal-offset feature families, plus the blob-based variants.
//! * [`blobs`] — tolerance-based connected components over raw frames.
//! * [`agent`] — sparse Sarsa(lambda) with replacing traces over the
//!   feature ids produced upstream.
//! * [`env`] — the environment contract, standard wrappers, two built-in
//!   deterministic toy games, and a wire protocol for external emulators.
//! * [`harness`] — multi-trial experiments, aggregation and Welch's t-test.

pub mod agent;
pub mod blobs;
pub mod env;
mod error;
pub mod features;
pub mod harness;
pub mod screen;

pub use error::{Error, Result};
