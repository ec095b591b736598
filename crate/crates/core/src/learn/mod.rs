//! Function approximators, the hierarchical policy and its PPO trainer.

mod mlp;
mod policy;
mod ppo;

use thiserror::Error;

pub use mlp::{clip_grad_norm, Activation, Adam, Mlp, MlpCache};
pub use policy::{
    anneal_temperature, gumbel_softmax_sample, log_softmax, repair_plan, softmax, GumbelSample,
    HierarchicalPolicy, PolicyCache, PolicyController, PolicyShape, SampleMode,
};
pub use ppo::{
    combined_advantage, critic_loss, gae, normalize, online_adapt, online_objective, ppo_update,
    surrogate_loss, Agent, Sample, SurrogateEval, TrainConfig, UpdateStats,
};

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
