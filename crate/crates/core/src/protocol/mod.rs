//! The two-phase communication protocol: negotiation fixes who decides
//! first, launching executes actions in that order.

mod comm;
mod launching;
mod negotiation;
mod order;

pub use comm::{count_messages, intention_value_messages, stated_broadcasts_per_agent, CommLog, Phase};
pub use launching::{launching_step, launching_steps, LaunchOutcome};
pub use negotiation::{
    determine_priorities, determine_priority, determine_priority_with, rollout_intention, sample_lower_orders,
    select_first_mover, trajectory_value, ActionChoice, AgentQuery, IntentionEvaluator, IntentionValue,
    NegotiationConfig, Planner, PredictedTrajectory, PriorityOutcome, RolloutJob,
};
pub use order::OrderSequence;
