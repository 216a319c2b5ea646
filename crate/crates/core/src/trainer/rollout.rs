use std::collections::BTreeMap;

use rand::Rng;

use super::buffer::{RolloutBuffer, StepRecord, WorldTransition};
use super::OrderingMode;
use crate::envs::{EnvSpec, EnvState};
use crate::error::{ensure, Result};
use crate::nn::{Messages, SeqCommNet};
use crate::protocol::{determine_priorities, launching_steps, ActionChoice, CommLog, NegotiationConfig, OrderSequence};
use crate::tensor::{ParamStore, Tensor};

/// Where actions come from during collection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionSource {
    Policy(ActionChoice),
    /// Uniformly random actions, used to seed the world model.
    Uniform,
}

/// Everything collection needs besides the rngs.
#[derive(Clone, Copy)]
pub struct Collector<'a> {
    pub env: &'a EnvSpec,
    pub net: &'a SeqCommNet,
    pub params: &'a ParamStore,
    pub mode: &'a OrderingMode,
    pub negotiation: &'a NegotiationConfig,
}

/// One batch of real experience.
#[derive(Clone, Debug, Default)]
pub struct Collected {
    pub buffer: RolloutBuffer,
    pub transitions: Vec<WorldTransition>,
    pub comm: CommLog,
    /// Decision orders used, keyed by their `2-0-1` form.
    pub orders: BTreeMap<String, u64>,
    pub env_steps: u64,
}

fn split_rows(t: &Tensor, parts: usize) -> Result<Vec<Tensor>> {
    let rows = t.rows() / parts;
    let width = t.cols();
    (0..parts)
        .map(|p| Tensor::matrix(rows, width, t.data()[p * rows * width..(p + 1) * rows * width].to_vec()))
        .collect()
}

fn stack(ts: &[Tensor]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(ts.iter().map(Tensor::len).sum());
    for t in ts {
        data.extend_from_slice(t.data());
    }
    Tensor::matrix(ts.iter().map(Tensor::rows).sum(), ts[0].cols(), data)
}

impl Collector<'_> {
    /// Runs one full episode in each environment, one rng per environment.
    /// Environments advance in lockstep but never share randomness, so a
    /// given environment's episode does not depend on how many run beside it.
    pub fn collect<R: Rng>(&self, source: ActionSource, rngs: &mut [R]) -> Result<Collected> {
        ensure!(!rngs.is_empty(), "collection needs at least one environment");
        self.mode.validate_for(self.env.n_agents())?;
        let envs = rngs.len();
        let n = self.env.n_agents();
        let n_actions = self.env.n_actions();
        let messages = self.mode.messages();
        let mut states: Vec<EnvState> = Vec::with_capacity(envs);
        let mut obs: Vec<Tensor> = Vec::with_capacity(envs);
        for rng in rngs.iter_mut() {
            let (s, o) = self.env.reset(rng.gen());
            states.push(s);
            obs.push(o);
        }
        let mut episodes: Vec<Vec<StepRecord>> = vec![Vec::new(); envs];
        let mut out = Collected::default();
        let mut done = false;
        while !done {
            let joint_obs = stack(&obs)?;
            let hidden = self.net.encoder.encode_rows(self.params, &joint_obs)?;
            let scenes = split_rows(&hidden, envs)?;
            let orders: Vec<OrderSequence> = match self.mode {
                OrderingMode::SeqComm if source != ActionSource::Uniform => {
                    let outcomes = determine_priorities(&scenes, self.net, self.params, self.negotiation, rngs)?;
                    outcomes
                        .into_iter()
                        .map(|o| {
                            out.comm += o.comm;
                            o.order
                        })
                        .collect()
                }
                OrderingMode::Fixed(order) => vec![order.clone(); envs],
                OrderingMode::Random => rngs.iter_mut().map(|r| OrderSequence::random(n, r)).collect(),
                _ => vec![OrderSequence::identity(n); envs],
            };
            if !matches!(self.mode, OrderingMode::SeqComm) && messages != Messages::Isolated {
                out.comm.hidden_state_broadcasts += (n * envs) as u64;
            }
            let launched = match source {
                ActionSource::Policy(choice) => {
                    launching_steps(&orders, &hidden, self.net, self.params, messages, choice, rngs)?
                }
                ActionSource::Uniform => rngs
                    .iter_mut()
                    .map(|r| crate::protocol::LaunchOutcome {
                        actions: (0..n).map(|_| r.gen_range(0..n_actions)).collect(),
                        log_probs: vec![-(n_actions as f64).ln(); n],
                        values: vec![0.0; n],
                        uppers: vec![vec![None; n]; n],
                        comm: CommLog::default(),
                    })
                    .collect(),
            };
            done = true;
            for e in 0..envs {
                let l = &launched[e];
                out.comm += l.comm;
                *out.orders.entry(orders[e].to_string()).or_insert(0) += 1;
                let step = self.env.step(&states[e], &l.actions)?;
                out.transitions.push(WorldTransition {
                    observations: obs[e].clone(),
                    actions: l.actions.clone(),
                    next_observations: step.observations.clone(),
                    reward: step.reward,
                });
                episodes[e].push(StepRecord {
                    observations: std::mem::replace(&mut obs[e], step.observations),
                    hidden: scenes[e].clone(),
                    order: orders[e].clone(),
                    actions: l.actions.clone(),
                    uppers: l.uppers.clone(),
                    reward: step.reward,
                    values: l.values.clone(),
                    log_probs: l.log_probs.clone(),
                    done: step.done,
                });
                states[e] = step.state;
                done &= step.done;
                out.env_steps += 1;
            }
        }
        for ep in episodes {
            out.buffer.push_episode(ep);
        }
        Ok(out)
    }
}
