use serde::{Deserialize, Serialize};

use super::{EnvState, Step};
use crate::tensor::Tensor;

/// Payoff of the one-step game. Rows are agent A's actions `a1..a3`,
/// columns agent B's `b1..b3`.
pub const MATRIX_PAYOFF: [[f64; 3]; 3] = [[12.0, 6.0, 6.0], [-6.0, 8.0, 0.0], [-6.0, 0.0, 8.0]];

/// The game has a single dummy state. Each agent observes only its own
/// role as a one-hot (A = 0, B = 1), so parameter-shared policies can still
/// tell the row player from the column player.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixGameSpec {}

impl MatrixGameSpec {
    pub fn obs_width(&self) -> usize {
        2
    }

    pub fn observations(&self) -> Tensor {
        Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).expect("2x2")
    }

    pub(crate) fn reset(&self) -> (EnvState, Tensor) {
        (EnvState::stateless(), self.observations())
    }

    pub(crate) fn step(&self, state: &EnvState, joint_action: &[usize]) -> Step {
        let mut next = state.clone();
        next.t += 1;
        Step {
            state: next,
            observations: self.observations(),
            reward: MATRIX_PAYOFF[joint_action[0]][joint_action[1]],
            done: true,
        }
    }
}
