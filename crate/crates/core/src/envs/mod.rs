//! Cooperative environments with partial per-agent observations and a single
//! shared team reward.
//!
//! * [`MatrixGameSpec`]: the two-player, one-step 3x3 game with several
//!   local optima.
//! * [`ParticleEnvSpec`]: cooperative navigation with displacement dynamics;
//!   agents see themselves and the landmarks but never each other.

mod matrix;
mod particle;

pub use matrix::{MatrixGameSpec, MATRIX_PAYOFF};
pub use particle::ParticleEnvSpec;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::tensor::Tensor;

pub type Point = [f64; 2];

/// Full simulator state. The matrix game only uses `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub positions: Vec<Point>,
    pub velocities: Vec<Point>,
    pub landmarks: Vec<Point>,
    pub t: usize,
}

impl EnvState {
    pub(crate) fn stateless() -> Self {
        Self {
            positions: Vec::new(),
            velocities: Vec::new(),
            landmarks: Vec::new(),
            t: 0,
        }
    }
}

/// Result of one environment transition.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub state: EnvState,
    /// `[n_agents, obs_width]`.
    pub observations: Tensor,
    pub reward: f64,
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvSpec {
    MatrixGame(MatrixGameSpec),
    Particle(ParticleEnvSpec),
}

impl EnvSpec {
    pub fn matrix_game() -> Self {
        Self::MatrixGame(MatrixGameSpec::default())
    }

    pub fn particle(n_agents: usize) -> Self {
        Self::Particle(ParticleEnvSpec::with_agents(n_agents))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::MatrixGame(_) => "matrix-game",
            Self::Particle(_) => "particle",
        }
    }

    pub fn n_agents(&self) -> usize {
        match self {
            Self::MatrixGame(_) => 2,
            Self::Particle(p) => p.n_agents,
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            Self::MatrixGame(_) => 3,
            Self::Particle(_) => 5,
        }
    }

    pub fn obs_width(&self) -> usize {
        match self {
            Self::MatrixGame(m) => m.obs_width(),
            Self::Particle(p) => p.obs_width(),
        }
    }

    pub fn episode_length(&self) -> usize {
        match self {
            Self::MatrixGame(_) => 1,
            Self::Particle(p) => p.episode_length,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::MatrixGame(_) => Ok(()),
            Self::Particle(p) => p.validate(),
        }
    }

    /// Deterministic initial state and joint observation for `seed`.
    pub fn reset(&self, seed: u64) -> (EnvState, Tensor) {
        match self {
            Self::MatrixGame(m) => m.reset(),
            Self::Particle(p) => p.reset(seed),
        }
    }

    pub fn step(&self, state: &EnvState, joint_action: &[usize]) -> Result<Step> {
        ensure!(
            joint_action.len() == self.n_agents(),
            "expected {} actions, got {}",
            self.n_agents(),
            joint_action.len()
        );
        for &a in joint_action {
            ensure!(a < self.n_actions(), "action {a} out of range for {} actions", self.n_actions());
        }
        ensure!(state.t < self.episode_length(), "episode already finished at t = {}", state.t);
        Ok(match self {
            Self::MatrixGame(m) => m.step(state, joint_action),
            Self::Particle(p) => p.step(state, joint_action),
        })
    }

    /// Team reward of a particle state; the matrix game has no state reward.
    pub fn team_reward(&self, state: &EnvState) -> Result<f64> {
        match self {
            Self::MatrixGame(_) => Err(Error::Unsupported(
                "team_reward is defined on particle states only".into(),
            )),
            Self::Particle(p) => Ok(p.team_reward(state)),
        }
    }

    /// Largest possible per-step reward magnitude, when known in closed form.
    pub fn reward_scale(&self) -> Option<f64> {
        match self {
            Self::MatrixGame(_) => Some(12.0),
            Self::Particle(_) => None,
        }
    }
}
