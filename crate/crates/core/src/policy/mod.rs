//! Tabular policy, rollouts and a PPO trainer driven by federated rewards.

mod ppo;
mod tabular;
mod train;

use thiserror::Error;

use crate::domain::DomainError;
use crate::federation::FederationError;

pub use ppo::{
    build_samples, gae, ppo_gradients, ppo_loss, ppo_update, shape_rewards, whiten_and_clamp,
    LossParts, LossReport, PpoConfig, Sample,
};
pub use tabular::{PolicyConfig, ReferencePolicy, TabularPolicy, ValueTable};
pub use train::{
    load_checkpoint, mean_kl, rollout, save_checkpoint, train, IterationLog, Step, TrainConfig,
    TrainingLog, Trajectory,
};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("policy has no table for question {0:?}")]
    UnknownQuestion(String),
    #[error("step {step} out of range for a {steps}-step episode")]
    InvalidStep { step: usize, steps: usize },
    #[error("action {0} is not available")]
    InvalidAction(usize),
    #[error("sampling failed: {0}")]
    Sampling(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("length mismatch: {0} rewards, {1} values")]
    LengthMismatch(usize, usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite { what: String, iteration: u64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Federation(#[from] FederationError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
