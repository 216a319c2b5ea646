use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

/// Message counts by kind.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommLog {
    pub hidden_state_broadcasts: u64,
    pub intention_value_messages: u64,
    pub action_messages: u64,
}

impl Add for CommLog {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            hidden_state_broadcasts: self.hidden_state_broadcasts + o.hidden_state_broadcasts,
            intention_value_messages: self.intention_value_messages + o.intention_value_messages,
            action_messages: self.action_messages + o.action_messages,
        }
    }
}

impl AddAssign for CommLog {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Negotiation,
    Launching,
}

/// Intention values exchanged while fixing levels `1..n-1`: at level `k`
/// each of the `n - k + 1` undecided agents broadcasts one value.
pub fn intention_value_messages(n: usize) -> u64 {
    (1..n).map(|k| (n - k + 1) as u64).sum()
}

/// Per-agent value broadcasts as stated for the protocol, `(n - 1) / 2`.
/// Reported next to [`intention_value_messages`] for comparison only.
pub fn stated_broadcasts_per_agent(n: usize) -> f64 {
    (n as f64 - 1.0) / 2.0
}

/// Messages one timestep costs under full communication.
pub fn count_messages(n: usize, phase: Phase) -> CommLog {
    match phase {
        Phase::Negotiation => CommLog {
            hidden_state_broadcasts: n as u64,
            intention_value_messages: intention_value_messages(n),
            action_messages: 0,
        },
        // level k sends its action to the n - k agents below it
        Phase::Launching => CommLog {
            action_messages: (n * n.saturating_sub(1) / 2) as u64,
            ..CommLog::default()
        },
    }
}
