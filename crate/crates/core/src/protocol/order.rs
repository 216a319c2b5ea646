use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Priority of decision-making at one timestep: `agents()[k]` decides at
/// level `k + 1`. Always a permutation of `0..n`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct OrderSequence(Vec<usize>);

impl OrderSequence {
    pub fn new(agents: Vec<usize>) -> Result<Self> {
        let n = agents.len();
        ensure!(n > 0, "an order sequence needs at least one agent");
        let mut seen = vec![false; n];
        for &a in &agents {
            ensure!(a < n && !seen[a], "{agents:?} is not a permutation of 0..{n}");
            seen[a] = true;
        }
        Ok(Self(agents))
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn random<R: Rng>(n: usize, rng: &mut R) -> Self {
        let mut v: Vec<usize> = (0..n).collect();
        v.shuffle(rng);
        Self(v)
    }

    pub fn agents(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Zero-based decision level of `agent`.
    pub fn level_of(&self, agent: usize) -> Option<usize> {
        self.0.iter().position(|&a| a == agent)
    }

    /// Agents that decide before `agent`, in decision order.
    pub fn uppers_of(&self, agent: usize) -> &[usize] {
        match self.level_of(agent) {
            Some(k) => &self.0[..k],
            None => &[],
        }
    }
}

impl TryFrom<Vec<usize>> for OrderSequence {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<OrderSequence> for Vec<usize> {
    fn from(o: OrderSequence) -> Self {
        o.0
    }
}

impl fmt::Display for OrderSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        write!(f, "{}", parts.join("-"))
    }
}
