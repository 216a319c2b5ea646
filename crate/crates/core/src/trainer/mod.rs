//! On-policy training with parameters shared across agents: collection
//! under an ordering mode, GAE, PPO-clip, critic regression and
//! world-model regression.

mod buffer;
mod mode;
mod ppo;
mod rollout;
mod run;
mod update;

pub use buffer::{RolloutBuffer, StepRecord, WorldModelDataset, WorldTransition};
pub use mode::OrderingMode;
pub use ppo::{compute_gae, normalize, ppo_clip_objective, PpoConfig};
pub use rollout::{ActionSource, Collected, Collector};
pub use run::{train, BatchStats, EvalConfig, TrainConfig, TrainSummary, Trainer, LOG_PROB_TOLERANCE};
pub use update::{
    check_log_probs, recompute_log_probs, surrogate_objective, update_policy, update_value, update_world_model,
    value_loss, world_model_loss,
};
