use serde::{Deserialize, Serialize};

use super::BoundInputs;
use crate::error::{ensure, Result};
use crate::nn::{Messages, SeqCommNet};
use crate::tensor::{ParamStore, Tensor};
use crate::trainer::{recompute_log_probs, world_model_loss, Collected, StepRecord, WorldTransition};

const SUM_TOLERANCE: f64 = 1e-9;

/// `0.5 * sum_i |p_i - q_i|` for two distributions over the same support.
///
/// ```
/// let d = seqcomm::analysis::tv_distance(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
/// assert_eq!(d, 0.5);
/// ```
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    ensure!(p.len() == q.len(), "distributions have lengths {} and {}", p.len(), q.len());
    ensure!(!p.is_empty(), "empty distributions");
    for (name, d) in [("p", p), ("q", q)] {
        ensure!(
            d.iter().all(|x| *x >= 0.0 && x.is_finite()),
            "{name} has a negative or non-finite entry"
        );
        let total: f64 = d.iter().sum();
        ensure!((total - 1.0).abs() <= SUM_TOLERANCE, "{name} sums to {total}, not 1");
    }
    let d = 0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>();
    Ok(d.min(1.0))
}

/// Largest divergence seen at each level over `items` of
/// `(level, old distribution, new distribution)`; levels never seen are 0.
pub fn level_divergences(levels: usize, items: &[(usize, Vec<f64>, Vec<f64>)]) -> Result<Vec<f64>> {
    let mut out = vec![0.0f64; levels];
    for (k, p, q) in items {
        ensure!(*k < levels, "level {k} out of range for {levels} levels");
        out[*k] = out[*k].max(tv_distance(p, q)?);
    }
    Ok(out)
}

/// Real transitions with the orders and upper actions used to collect them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProbeBatch {
    pub steps: Vec<StepRecord>,
    /// Observation after each step, aligned with `steps`.
    pub next_observations: Vec<Tensor>,
}

impl ProbeBatch {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Pairs each stored step with the observation that followed it.
    pub fn from_collected(c: Collected) -> Result<Self> {
        let envs = c.buffer.episodes.len();
        ensure!(envs > 0, "nothing was collected");
        ensure!(c.transitions.len() == c.buffer.steps.len(), "transitions and steps disagree in number");
        let mut next_observations = Vec::with_capacity(c.buffer.steps.len());
        for (e, &(start, len)) in c.buffer.episodes.iter().enumerate() {
            for t in 0..len {
                // environments advance in lockstep, step-major
                let tr = &c.transitions[t * envs + e];
                ensure!(
                    tr.observations == c.buffer.steps[start + t].observations,
                    "transition order does not match the episodes"
                );
                next_observations.push(tr.next_observations.clone());
            }
        }
        Ok(Self {
            steps: c.buffer.steps,
            next_observations,
        })
    }

    pub fn transitions(&self) -> Vec<WorldTransition> {
        self.steps
            .iter()
            .zip(&self.next_observations)
            .map(|(s, next)| WorldTransition {
                observations: s.observations.clone(),
                actions: s.actions.clone(),
                next_observations: next.clone(),
                reward: s.reward,
            })
            .collect()
    }
}

/// Bound inputs measured between two parameter sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceEstimate {
    pub inputs: BoundInputs,
    /// What `epsilon_m` actually is. It is not a total-variation bound.
    pub epsilon_m_kind: String,
    pub probe_states: usize,
}

fn distributions(net: &SeqCommNet, params: &ParamStore, probe: &ProbeBatch, messages: Messages) -> Result<Vec<Vec<Vec<f64>>>> {
    // every action's probability, one pass per action column
    let n_actions = net.n_actions();
    let mut per_action = Vec::with_capacity(n_actions);
    for a in 0..n_actions {
        let mut b = crate::trainer::RolloutBuffer::default();
        let steps = probe
            .steps
            .iter()
            .map(|s| StepRecord {
                actions: vec![a; s.actions.len()],
                ..s.clone()
            })
            .collect();
        b.push_episode(steps);
        per_action.push(recompute_log_probs(net, params, &b, messages)?);
    }
    Ok((0..probe.len())
        .map(|t| {
            let n = probe.steps[t].actions.len();
            (0..n)
                .map(|i| (0..n_actions).map(|a| per_action[a][t][i].exp()).collect())
                .collect()
        })
        .collect())
}

/// Per-level policy divergences between `old` and `new` on the probe
/// states (each agent judged at the level it held there), plus a
/// world-model error proxy and the observed reward scale.
///
/// `epsilon_m` is the mean squared prediction error of the `new` world
/// model on the probe transitions. It stands in for the transition
/// total-variation bound, which needs densities this model does not have.
pub fn estimate_divergences(
    net: &SeqCommNet,
    old: &ParamStore,
    new: &ParamStore,
    probe: &ProbeBatch,
    messages: Messages,
    gamma: f64,
) -> Result<DivergenceEstimate> {
    ensure!(!probe.is_empty(), "probe batch is empty");
    ensure!(probe.next_observations.len() == probe.len(), "probe is missing next observations");
    let n = probe.steps[0].actions.len();
    let p_old = distributions(net, old, probe, messages)?;
    let p_new = distributions(net, new, probe, messages)?;
    let mut items = Vec::with_capacity(probe.len() * n);
    for (t, step) in probe.steps.iter().enumerate() {
        for agent in 0..n {
            let level = step.order.level_of(agent).expect("orders cover every agent");
            items.push((level, p_old[t][agent].clone(), p_new[t][agent].clone()));
        }
    }
    let epsilon_pi = level_divergences(n, &items)?;
    let transitions = probe.transitions();
    let refs: Vec<&WorldTransition> = transitions.iter().collect();
    let epsilon_m = world_model_loss(net, new, &refs)?;
    let r_max = probe.steps.iter().map(|s| s.reward.abs()).fold(0.0, f64::max);
    Ok(DivergenceEstimate {
        inputs: BoundInputs {
            epsilon_m,
            epsilon_pi,
            gamma,
            r_max,
        },
        epsilon_m_kind: "world-model mean squared error (proxy, not a total-variation bound)".into(),
        probe_states: probe.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tv_hand_cases() {
        assert_eq!(tv_distance(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(tv_distance(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), 0.5);
        assert!(tv_distance(&[0.5, 0.5], &[1.0]).is_err());
        assert!(tv_distance(&[0.5, 0.6], &[1.0, 0.0]).is_err());
        assert!(tv_distance(&[1.5, -0.5], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn two_state_probe_takes_the_max() {
        // state 1: TV 0.1 at level 0; state 2: TV 0.3 at level 0, 0.25 at level 1
        let items = vec![
            (0, vec![0.5, 0.5], vec![0.6, 0.4]),
            (0, vec![0.2, 0.8], vec![0.5, 0.5]),
            (1, vec![1.0, 0.0], vec![0.75, 0.25]),
        ];
        let d = level_divergences(2, &items).unwrap();
        assert!((d[0] - 0.3).abs() < 1e-12);
        assert!((d[1] - 0.25).abs() < 1e-12);
    }
}
