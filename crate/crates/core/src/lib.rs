//! Simulation and learning toolkit for measurement-induced phase transitions in
//! monitored brickwork circuits.
//!
//! The crate is organised bottom-up:
//!
//! - [`statevec`]: dense statevector engine (gates, Born sampling, noise, entropies).
//! - [`circuits`]: the three circuit protocols and trajectory sampling.
//! - [`dataset`]: the packed trajectory file format, set batching and augmentation.
//! - [`borndist`]: analytical and empirical distributions of Born probabilities.
//! - [`decoder`]: Bayesian optimal decoding and correct-inference likelihoods.
//! - [`orderparam`]: reference-qubit entropy sweeps and curve crossings.
//! - [`correlations`]: spacetime correlators of the measurement record.
//! - [`quan`]: the set-attention classifier with hand-written gradients.

extern crate self as mipt_core;

pub mod borndist;
pub mod circuits;
pub mod correlations;
pub mod dataset;
pub mod decoder;
mod error;
pub mod orderparam;
#[cfg(test)]
mod properties;
pub mod quan;
pub mod rng;
pub mod stats;
pub mod statevec;

pub use circuits::{CircuitConfig, InitialState, TaskKind, TrajectoryRecord};
pub use error::{Error, Result};
pub use statevec::{Gate1Q, Gate2Q, NoiseModel, PureState};
