//! Fixtures shared by the benchmarks.

use mipt_core::circuits::TrajectorySampler;
use mipt_core::quan::{ModelDims, ModelParams};
use mipt_core::rng::stream_rng;
use mipt_core::{CircuitConfig, InitialState, TaskKind, TrajectoryRecord};

/// Phase-recognition trajectories at one `(L, γ)`.
pub fn phase_records(l: usize, gamma: f64, count: usize) -> Vec<TrajectoryRecord> {
    let config = CircuitConfig::new(l, gamma, TaskKind::PhaseRecognition, InitialState::Psi0, 1);
    TrajectorySampler::new(config).unwrap().run_many(0..count as u64).unwrap()
}

/// Freshly initialized model with the default widths.
pub fn model(l: usize) -> ModelParams {
    ModelParams::init(ModelDims { l, n_e: 4, d_h: 16 }, &mut stream_rng(1, 0))
}
