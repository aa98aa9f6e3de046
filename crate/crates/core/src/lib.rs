//! Primary-user emulation (PUE) attack detection under intermittent spectrum
//! sensing.
//!
//! The crate simulates a primary user whose ON/OFF sojourns follow
//! Hyper-Erlang distributions, samples it with short periodic observation
//! windows, overlays short-impulse emulation attacks, and detects them from
//! the prediction loss of recurrent networks trained on clean activity.

pub mod channel_sim;
pub mod checkpoint;
pub mod config;
pub mod detector;
pub mod error;
pub mod eval;
pub mod lstm;
pub mod model;
pub mod network;
pub mod nn;
pub mod parallel;
pub mod rng;
pub mod rnn;

pub use error::{Error, Result};
