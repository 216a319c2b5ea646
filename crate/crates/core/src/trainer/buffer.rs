use std::collections::VecDeque;

use crate::error::{ensure, Result};
use crate::protocol::OrderSequence;
use crate::tensor::Tensor;

/// One real timestep of one environment.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    /// `[n, obs_width]` before acting.
    pub observations: Tensor,
    /// `[n, 48]` as encoded at collection time.
    pub hidden: Tensor,
    pub order: OrderSequence,
    pub actions: Vec<usize>,
    /// `uppers[i][j]` is agent `j`'s action as seen by agent `i`.
    pub uppers: Vec<Vec<Option<usize>>>,
    pub reward: f64,
    pub values: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub done: bool,
}

/// On-policy storage: whole episodes, env-major.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutBuffer {
    pub steps: Vec<StepRecord>,
    /// `(start, len)` of each episode in `steps`.
    pub episodes: Vec<(usize, usize)>,
    /// Per step and agent, filled by [`RolloutBuffer::finalize`].
    pub advantages: Vec<Vec<f64>>,
    pub returns: Vec<Vec<f64>>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn is_finalized(&self) -> bool {
        !self.steps.is_empty() && self.advantages.len() == self.steps.len()
    }

    pub fn push_episode(&mut self, steps: Vec<StepRecord>) {
        self.episodes.push((self.steps.len(), steps.len()));
        self.steps.extend(steps);
        self.advantages.clear();
        self.returns.clear();
    }

    /// Undiscounted team return of every stored episode.
    pub fn episode_returns(&self) -> Vec<f64> {
        self.episodes
            .iter()
            .map(|&(s, l)| self.steps[s..s + l].iter().map(|r| r.reward).sum())
            .collect()
    }

    /// Per-agent GAE over every episode, then advantage normalization over
    /// the whole batch. Returns stay unnormalized.
    pub fn finalize(&mut self, gamma: f64, lambda: f64, normalize: bool) -> Result<()> {
        ensure!(!self.steps.is_empty(), "cannot finalize an empty buffer");
        let n = self.steps[0].actions.len();
        self.advantages = vec![vec![0.0; n]; self.steps.len()];
        self.returns = vec![vec![0.0; n]; self.steps.len()];
        for &(start, len) in &self.episodes {
            let rows = &self.steps[start..start + len];
            let rewards: Vec<f64> = rows.iter().map(|r| r.reward).collect();
            ensure!(rows.last().is_some_and(|r| r.done), "episode at step {start} is not finished");
            for agent in 0..n {
                let values: Vec<f64> = rows.iter().map(|r| r.values[agent]).collect();
                let (adv, ret) = super::compute_gae(&rewards, &values, 0.0, gamma, lambda)?;
                for k in 0..len {
                    self.advantages[start + k][agent] = adv[k];
                    self.returns[start + k][agent] = ret[k];
                }
            }
        }
        if normalize {
            let mut flat: Vec<f64> = self.advantages.iter().flatten().copied().collect();
            super::normalize(&mut flat);
            for (k, row) in self.advantages.iter_mut().enumerate() {
                row.copy_from_slice(&flat[k * n..(k + 1) * n]);
            }
        }
        Ok(())
    }

    pub fn clear(&mut self) {
        *self = Self::default();
    }
}

/// One real transition for world-model regression.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldTransition {
    pub observations: Tensor,
    pub actions: Vec<usize>,
    pub next_observations: Tensor,
    pub reward: f64,
}

/// Bounded FIFO of real transitions; the oldest are dropped first.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldModelDataset {
    items: VecDeque<WorldTransition>,
    capacity: usize,
}

impl WorldModelDataset {
    pub fn new(capacity: usize) -> Self {
        Self {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity: capacity.max(1),
        }
    }

    pub fn push(&mut self, t: WorldTransition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn extend(&mut self, ts: impl IntoIterator<Item = WorldTransition>) {
        for t in ts {
            self.push(t);
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &WorldTransition> {
        self.items.iter()
    }

    pub fn get(&self, i: usize) -> &WorldTransition {
        &self.items[i]
    }
}
