//! QuAN: a set-attention classifier over sets of measurement trajectories.
//!
//! Each record is embedded cluster by cluster, summarized by a temporal
//! self-attention block into one value per (paired) time slice, mixed across the
//! set by an inter-trajectory self-attention stack and pooled by a learned seed
//! query into a single probability. Gradients are hand-written and checked
//! against finite differences in the tests.

pub mod checkpoint;
pub mod introspect;
pub mod layers;
pub mod model;
pub mod optim;
pub mod params;
#[cfg(test)]
mod reference;
pub mod train;

use serde::{Deserialize, Serialize};

pub use checkpoint::Checkpoint;
pub use model::{backward, embed, forward, predict, ForwardPass};
pub use optim::{adam_step, bce_loss, AdamState};
pub use params::{Mat, ModelDims, ModelParams};
pub use train::{eval_metrics, minimal_sample_complexity, train, EvalMetrics, TrainHistory, TrainOutcome};

/// Architecture switches for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Ablation {
    #[default]
    Full,
    /// Temporal-block outputs go straight to the pooling block.
    NoInterTraj,
    /// No inter-trajectory stack, and every attention replaced by a uniform mean.
    NoAttention,
}

impl Ablation {
    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoInterTraj => "no-intertraj",
            Ablation::NoAttention => "no-attention",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "full" => Some(Ablation::Full),
            "no-intertraj" => Some(Ablation::NoInterTraj),
            "no-attention" => Some(Ablation::NoAttention),
            _ => None,
        }
    }
}

/// Model and optimizer hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_e: usize,
    /// Set size `N`.
    pub set_size: usize,
    pub d_h: usize,
    pub drop_rate: f64,
    pub learning_rate: f64,
    pub l2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Trajectories per minibatch; a batch holds `batch_trajectories / N` sets.
    pub batch_trajectories: usize,
    pub max_epochs: usize,
    /// Stop after this many epochs without a lower test loss.
    pub patience: usize,
    /// Sets are redrawn every this many epochs.
    pub shuffle_period: usize,
    pub seed: u64,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_e: 4,
            set_size: 64,
            d_h: 16,
            drop_rate: 0.1,
            learning_rate: 1e-4,
            l2: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_trajectories: 2048,
            max_epochs: 2000,
            patience: 200,
            shuffle_period: 10,
            seed: 0,
            ablation: Ablation::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let bad = |msg: &str| Err(crate::Error::invalid(msg.to_string()));
        if self.n_e == 0 || self.d_h == 0 || self.set_size == 0 {
            return bad("n_e, d_h and N must be positive");
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            return bad("drop rate must lie in [0, 1)");
        }
        if !(self.learning_rate > 0.0) || self.l2 < 0.0 || self.eps <= 0.0 {
            return bad("learning rate and eps must be positive, L2 non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if self.batch_trajectories < self.set_size || self.max_epochs == 0 || self.shuffle_period == 0 {
            return bad("a batch must hold at least one set; epochs and shuffle period must be positive");
        }
        Ok(())
    }

    /// Sets per minibatch.
    pub fn batch_sets(&self) -> usize {
        (self.batch_trajectories / self.set_size).max(1)
    }

    pub fn dims(&self, l: usize) -> ModelDims {
        ModelDims { l, n_e: self.n_e, d_h: self.d_h }
    }
}
