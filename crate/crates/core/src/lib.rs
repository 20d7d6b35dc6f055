//! Finite-size certified randomness from a single untrusted device.
//!
//! The crate bounds the conditional entropy produced by one round of a
//! test-or-generate protocol, accumulates it over many rounds, and simulates
//! the protocol against model devices to check the bounds numerically.

pub mod bound;
pub mod cli;
pub mod config;
pub mod device;
pub mod eat;
pub mod linalg;
pub mod numerics;
pub mod protocol;
pub mod verify;
