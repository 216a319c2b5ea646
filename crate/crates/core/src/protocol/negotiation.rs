//! Negotiation phase: intention rollouts under the world model and the
//! level-by-level choice of who decides next.
//!
//! Nothing here can reach a real environment: the only dynamics available
//! are the world model inside [`SeqCommNet`].

use itertools::Itertools;
use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::comm::CommLog;
use super::OrderSequence;
use crate::error::{ensure, Result};
use crate::nn::{AgentBatch, Categorical, Messages, SeqCommNet};
use crate::tensor::{ParamStore, Tensor};

/// How actions are picked inside rollouts and for committed upper agents.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionChoice {
    /// Distribution mode, ties to the lowest action.
    #[default]
    Greedy,
    Sample,
}

impl ActionChoice {
    pub fn pick<R: Rng>(self, dist: &Categorical, rng: &mut R) -> usize {
        match self {
            Self::Greedy => dist.mode(),
            Self::Sample => dist.sample(rng),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NegotiationConfig {
    /// Rollout horizon `H`.
    pub horizon: usize,
    /// Sampled lower-level orders per intention, `F`.
    pub samples: usize,
    pub gamma: f64,
    #[serde(default)]
    pub rollout_actions: ActionChoice,
}

impl NegotiationConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.horizon >= 1, "horizon must be at least 1");
        ensure!(self.samples >= 1, "samples must be at least 1");
        ensure!(self.gamma > 0.0 && self.gamma <= 1.0, "gamma must lie in (0, 1]");
        Ok(())
    }
}

/// Discounted mean return of one predicted trajectory:
/// `sum_{j<H} gamma^j r_{j+1} / H`.
///
/// ```
/// let v = seqcomm::protocol::trajectory_value(&[1.0, 0.0, 2.0], 0.95, 3).unwrap();
/// assert!((v - 0.935).abs() < 1e-12);
/// ```
pub fn trajectory_value(rewards: &[f64], gamma: f64, horizon: usize) -> Result<f64> {
    ensure!(
        rewards.len() == horizon && horizon > 0,
        "expected {horizon} predicted rewards, got {}",
        rewards.len()
    );
    ensure!(gamma > 0.0 && gamma <= 1.0, "gamma must lie in (0, 1], got {gamma}");
    let mut discount = 1.0;
    let mut total = 0.0;
    for r in rewards {
        total += discount * r;
        discount *= gamma;
    }
    Ok(total / horizon as f64)
}

/// An `H`-step rollout produced entirely by the world model.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictedTrajectory {
    /// Full decision order used at every step of the rollout.
    pub order: Vec<usize>,
    /// Predicted joint actions `a_t .. a_{t+H-1}`, indexed by agent.
    pub actions: Vec<Vec<usize>>,
    /// Predicted joint observations `o_{t+1} .. o_{t+H}`, each `[n, obs_width]`.
    pub observations: Vec<Tensor>,
    /// Predicted rewards `r_{t+1} .. r_{t+H}`.
    pub rewards: Vec<f64>,
}

impl PredictedTrajectory {
    pub fn horizon(&self) -> usize {
        self.rewards.len()
    }
}

/// One candidate's Monte-Carlo intention estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct IntentionValue {
    pub agent: usize,
    pub value: f64,
    pub trajectory_values: Vec<f64>,
    pub lower_orders: Vec<Vec<usize>>,
}

/// One world-model rollout to run: scene `scene`, decision order `order`,
/// whose leading agents `fixed` have pinned actions at the first step.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutJob {
    pub scene: usize,
    pub order: Vec<usize>,
    pub fixed: Vec<(usize, usize)>,
}

/// A question about one agent of one scene, given that scene's fixed uppers.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentQuery {
    pub scene: usize,
    pub agent: usize,
    pub fixed: Vec<(usize, usize)>,
}

/// World-model rollouts over one or more scenes at once.
///
/// Every scene is a `[n, HIDDEN_WIDTH]` joint hidden state with the same
/// `n`. Each scene owns one rng so its results do not depend on which other
/// scenes share the batch.
#[derive(Clone, Copy)]
pub struct Planner<'a> {
    pub net: &'a SeqCommNet,
    pub params: &'a ParamStore,
    pub config: &'a NegotiationConfig,
}

impl<'a> Planner<'a> {
    pub fn new(net: &'a SeqCommNet, params: &'a ParamStore, config: &'a NegotiationConfig) -> Self {
        Self { net, params, config }
    }

    fn agents_of(scenes: &[Tensor]) -> Result<usize> {
        ensure!(!scenes.is_empty(), "planner needs at least one scene");
        let n = scenes[0].rows();
        ensure!(
            scenes.iter().all(|s| s.rank() == 2 && s.rows() == n),
            "all scenes must share one agent count"
        );
        Ok(n)
    }

    fn stack(scenes: &[Tensor], pick: impl Iterator<Item = usize>) -> Result<Tensor> {
        let mut data = Vec::new();
        let mut rows = 0;
        for s in pick {
            data.extend_from_slice(scenes[s].data());
            rows += scenes[s].rows();
        }
        Tensor::matrix(rows, scenes[0].cols(), data)
    }

    /// Runs every job in lockstep to depth `H`.
    pub fn rollouts<R: Rng>(&self, scenes: &[Tensor], jobs: &[RolloutJob], rngs: &mut [R]) -> Result<Vec<PredictedTrajectory>> {
        let n = Self::agents_of(scenes)?;
        ensure!(rngs.len() == scenes.len(), "{} rngs for {} scenes", rngs.len(), scenes.len());
        let width = self.net.obs_width();
        for job in jobs {
            ensure!(job.scene < scenes.len(), "scene {} out of range", job.scene);
            ensure!(
                job.order.len() == n && OrderSequence::new(job.order.clone()).is_ok(),
                "{:?} is not an order over {n} agents",
                job.order
            );
            ensure!(
                job.fixed.len() <= n && job.fixed.iter().zip(&job.order).all(|(f, &a)| f.0 == a),
                "order {:?} does not start with the fixed agents",
                job.order
            );
        }
        let count = jobs.len();
        let mut hidden = Self::stack(scenes, jobs.iter().map(|j| j.scene))?;
        let mut out: Vec<PredictedTrajectory> = jobs
            .iter()
            .map(|j| PredictedTrajectory {
                order: j.order.clone(),
                actions: Vec::new(),
                observations: Vec::new(),
                rewards: Vec::new(),
            })
            .collect();

        for depth in 0..self.config.horizon {
            let mut slots = vec![vec![None; n]; count];
            for level in 0..n {
                let mut batch = AgentBatch::default();
                let mut members = Vec::with_capacity(count);
                for (r, job) in jobs.iter().enumerate() {
                    if depth == 0 && level < job.fixed.len() {
                        let (agent, action) = job.fixed[level];
                        slots[r][agent] = Some(action);
                    } else {
                        batch.push(r * n, n, job.order[level], &slots[r], Messages::Full);
                        members.push(r);
                    }
                }
                if members.is_empty() {
                    continue;
                }
                let dists = self.net.distributions(self.params, &hidden, &batch)?;
                for (dist, &r) in dists.iter().zip(&members) {
                    let job = &jobs[r];
                    slots[r][job.order[level]] = Some(self.config.rollout_actions.pick(dist, &mut rngs[job.scene]));
                }
            }
            let joint: Vec<usize> = slots.iter().flatten().map(|a| a.expect("every agent acted")).collect();
            let (pred_obs, rewards) = self.net.world.predict(self.params, &hidden, &joint, n)?;
            for (r, traj) in out.iter_mut().enumerate() {
                traj.actions.push(joint[r * n..(r + 1) * n].to_vec());
                let row = &pred_obs.data()[r * n * width..(r + 1) * n * width];
                traj.observations.push(Tensor::matrix(n, width, row.to_vec())?);
                traj.rewards.push(rewards[r]);
            }
            if depth + 1 < self.config.horizon {
                // predicted observations become the next hidden states
                let flat = pred_obs.reshaped(vec![count * n, width])?;
                hidden = self.net.encoder.encode_rows(self.params, &flat)?;
            }
        }
        Ok(out)
    }

    /// Action each queried agent commits to at the real step, conditioned
    /// on its scene's fixed uppers.
    pub fn committed_actions<R: Rng>(&self, scenes: &[Tensor], queries: &[AgentQuery], rngs: &mut [R]) -> Result<Vec<usize>> {
        let n = Self::agents_of(scenes)?;
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        let hidden = Self::stack(scenes, 0..scenes.len())?;
        let mut batch = AgentBatch::default();
        for q in queries {
            ensure!(q.scene < scenes.len() && q.agent < n, "query {q:?} out of range");
            let mut slots = vec![None; n];
            for &(a, act) in &q.fixed {
                slots[a] = Some(act);
            }
            batch.push(q.scene * n, n, q.agent, &slots, Messages::Full);
        }
        let dists = self.net.distributions(self.params, &hidden, &batch)?;
        Ok(dists
            .iter()
            .zip(queries)
            .map(|(d, q)| self.config.rollout_actions.pick(d, &mut rngs[q.scene]))
            .collect())
    }

    /// Intention values of every queried candidate, rolled out in one batch.
    pub fn intentions<R: Rng>(&self, scenes: &[Tensor], queries: &[AgentQuery], rngs: &mut [R]) -> Result<Vec<IntentionValue>> {
        let n = Self::agents_of(scenes)?;
        ensure!(rngs.len() == scenes.len(), "{} rngs for {} scenes", rngs.len(), scenes.len());
        let f = self.config.samples;
        let mut jobs = Vec::with_capacity(queries.len() * f);
        let mut lowers = Vec::with_capacity(queries.len());
        for q in queries {
            let c = q.agent;
            ensure!(q.scene < scenes.len(), "scene {} out of range", q.scene);
            ensure!(c < n, "agent {c} out of range for {n} agents");
            ensure!(q.fixed.iter().all(|&(a, _)| a != c), "agent {c} is already fixed");
            let rest: Vec<usize> = (0..n).filter(|&a| a != c && q.fixed.iter().all(|&(x, _)| x != a)).collect();
            let sampled = sample_lower_orders(&rest, f, &mut rngs[q.scene]);
            for lower in &sampled {
                let mut order: Vec<usize> = q.fixed.iter().map(|&(a, _)| a).collect();
                order.push(c);
                order.extend(lower);
                jobs.push(RolloutJob {
                    scene: q.scene,
                    order,
                    fixed: q.fixed.clone(),
                });
            }
            lowers.push(sampled);
        }
        let trajs = self.rollouts(scenes, &jobs, rngs)?;
        let (gamma, h) = (self.config.gamma, self.config.horizon);
        queries
            .iter()
            .zip(lowers)
            .enumerate()
            .map(|(i, (q, lower_orders))| {
                let trajectory_values = trajs[i * f..(i + 1) * f]
                    .iter()
                    .map(|t| trajectory_value(&t.rewards, gamma, h))
                    .collect::<Result<Vec<_>>>()?;
                let value = trajectory_values.iter().sum::<f64>() / f as f64;
                Ok(IntentionValue {
                    agent: q.agent,
                    value,
                    trajectory_values,
                    lower_orders,
                })
            })
            .collect()
    }
}

fn factorial(k: usize) -> usize {
    (1..=k).fold(1usize, |acc, x| acc.saturating_mul(x))
}

/// `count` orders of `agents`, uniformly at random. Distinct whenever
/// `count <= agents.len()!`, otherwise drawn with replacement.
pub fn sample_lower_orders<R: Rng>(agents: &[usize], count: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let total = factorial(agents.len());
    if count <= total && total <= 40_320 {
        let all: Vec<Vec<usize>> = agents.iter().copied().permutations(agents.len()).collect();
        index::sample(rng, total, count).into_iter().map(|i| all[i].clone()).collect()
    } else if count <= total {
        let mut picked: Vec<Vec<usize>> = Vec::with_capacity(count);
        while picked.len() < count {
            let mut p = agents.to_vec();
            p.shuffle(rng);
            if !picked.contains(&p) {
                picked.push(p);
            }
        }
        picked
    } else {
        (0..count)
            .map(|_| {
                let mut p = agents.to_vec();
                p.shuffle(rng);
                p
            })
            .collect()
    }
}

/// Rollout-based intention value of `first_mover` given the already fixed
/// upper agents and their committed actions.
pub fn rollout_intention<R: Rng>(
    first_mover: usize,
    fixed_uppers: &[(usize, usize)],
    joint_hidden: &Tensor,
    net: &SeqCommNet,
    params: &ParamStore,
    config: &NegotiationConfig,
    rng: &mut R,
) -> Result<IntentionValue> {
    config.validate()?;
    let query = AgentQuery {
        scene: 0,
        agent: first_mover,
        fixed: fixed_uppers.to_vec(),
    };
    let mut out = Planner::new(net, params, config).intentions(
        std::slice::from_ref(joint_hidden),
        &[query],
        std::slice::from_mut(rng),
    )?;
    Ok(out.remove(0))
}

/// Source of intention values for [`determine_priority_with`], one scene.
pub trait IntentionEvaluator {
    fn n_agents(&self) -> usize;
    /// One value per candidate, given the fixed `(agent, action)` uppers.
    fn intention_values(&mut self, candidates: &[usize], fixed: &[(usize, usize)]) -> Result<Vec<f64>>;
    /// Action `agent` commits to once selected, given the earlier uppers.
    fn committed_action(&mut self, agent: usize, fixed: &[(usize, usize)]) -> Result<usize>;
}

/// Evaluator for many scenes at once; the level loop only sees this.
trait SceneEvaluator {
    fn scenes(&self) -> usize;
    fn n_agents(&self) -> usize;
    fn values(&mut self, queries: &[AgentQuery]) -> Result<Vec<f64>>;
    fn commits(&mut self, queries: &[AgentQuery]) -> Result<Vec<usize>>;
}

struct Single<'e, E>(&'e mut E);

impl<E: IntentionEvaluator> SceneEvaluator for Single<'_, E> {
    fn scenes(&self) -> usize {
        1
    }
    fn n_agents(&self) -> usize {
        self.0.n_agents()
    }
    fn values(&mut self, queries: &[AgentQuery]) -> Result<Vec<f64>> {
        let Some(first) = queries.first() else {
            return Ok(Vec::new());
        };
        let candidates: Vec<usize> = queries.iter().map(|q| q.agent).collect();
        self.0.intention_values(&candidates, &first.fixed)
    }
    fn commits(&mut self, queries: &[AgentQuery]) -> Result<Vec<usize>> {
        queries.iter().map(|q| self.0.committed_action(q.agent, &q.fixed)).collect()
    }
}

struct Batched<'a, 's, R> {
    planner: Planner<'a>,
    scenes: &'s [Tensor],
    rngs: &'s mut [R],
}

impl<R: Rng> SceneEvaluator for Batched<'_, '_, R> {
    fn scenes(&self) -> usize {
        self.scenes.len()
    }
    fn n_agents(&self) -> usize {
        self.scenes[0].rows()
    }
    fn values(&mut self, queries: &[AgentQuery]) -> Result<Vec<f64>> {
        Ok(self
            .planner
            .intentions(self.scenes, queries, self.rngs)?
            .into_iter()
            .map(|v| v.value)
            .collect())
    }
    fn commits(&mut self, queries: &[AgentQuery]) -> Result<Vec<usize>> {
        self.planner.committed_actions(self.scenes, queries, self.rngs)
    }
}

/// Index into `candidates` of the highest value; ties go to the lowest id.
pub fn select_first_mover(candidates: &[usize], values: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..candidates.len() {
        let better = values[i] > values[best] || (values[i] == values[best] && candidates[i] < candidates[best]);
        if better {
            best = i;
        }
    }
    best
}

/// Outcome of the negotiation phase at one timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorityOutcome {
    pub order: OrderSequence,
    /// Candidate values considered at each level that required a choice.
    pub levels: Vec<Vec<(usize, f64)>>,
    /// Committed actions of the agents fixed during negotiation.
    pub committed: Vec<(usize, usize)>,
    pub comm: CommLog,
}

fn priority_levels<E: SceneEvaluator>(eval: &mut E) -> Result<Vec<PriorityOutcome>> {
    let n = eval.n_agents();
    let scenes = eval.scenes();
    ensure!(n >= 1, "priority determination needs at least one agent");
    let mut remaining: Vec<Vec<usize>> = vec![(0..n).collect(); scenes];
    let mut fixed: Vec<Vec<(usize, usize)>> = vec![Vec::with_capacity(n); scenes];
    let mut levels: Vec<Vec<Vec<(usize, f64)>>> = vec![Vec::new(); scenes];
    let mut comm = CommLog {
        hidden_state_broadcasts: n as u64,
        ..CommLog::default()
    };
    while remaining[0].len() > 1 {
        let queries: Vec<AgentQuery> = (0..scenes)
            .flat_map(|s| {
                remaining[s].iter().map(move |&agent| (s, agent))
            })
            .map(|(s, agent)| AgentQuery {
                scene: s,
                agent,
                fixed: fixed[s].clone(),
            })
            .collect();
        let values = eval.values(&queries)?;
        let width = remaining[0].len();
        ensure!(
            values.len() == queries.len(),
            "evaluator returned {} values for {} candidates",
            values.len(),
            queries.len()
        );
        comm.intention_value_messages += width as u64;
        let mut chosen = Vec::with_capacity(scenes);
        for s in 0..scenes {
            let vals = &values[s * width..(s + 1) * width];
            let pick = select_first_mover(&remaining[s], vals);
            levels[s].push(remaining[s].iter().copied().zip(vals.iter().copied()).collect());
            chosen.push(remaining[s].remove(pick));
        }
        if remaining[0].len() > 1 {
            let queries: Vec<AgentQuery> = chosen
                .iter()
                .enumerate()
                .map(|(s, &agent)| AgentQuery {
                    scene: s,
                    agent,
                    fixed: fixed[s].clone(),
                })
                .collect();
            let actions = eval.commits(&queries)?;
            for s in 0..scenes {
                fixed[s].push((chosen[s], actions[s]));
            }
        } else {
            // the remaining agent's level is forced, so nobody below needs this action
            for s in 0..scenes {
                fixed[s].push((chosen[s], usize::MAX));
            }
        }
    }
    (0..scenes)
        .map(|s| {
            let mut order: Vec<usize> = fixed[s].iter().map(|&(a, _)| a).collect();
            order.extend(&remaining[s]);
            let committed = fixed[s].iter().copied().filter(|&(_, act)| act != usize::MAX).collect();
            Ok(PriorityOutcome {
                order: OrderSequence::new(order)?,
                levels: std::mem::take(&mut levels[s]),
                committed,
                comm,
            })
        })
        .collect()
}

/// Level-by-level priority determination driven by any evaluator.
pub fn determine_priority_with<E: IntentionEvaluator>(eval: &mut E) -> Result<PriorityOutcome> {
    Ok(priority_levels(&mut Single(eval))?.remove(0))
}

/// World-model-driven priority of decision-making for one timestep.
pub fn determine_priority<R: Rng>(
    joint_hidden: &Tensor,
    net: &SeqCommNet,
    params: &ParamStore,
    config: &NegotiationConfig,
    rng: &mut R,
) -> Result<PriorityOutcome> {
    Ok(determine_priorities(std::slice::from_ref(joint_hidden), net, params, config, std::slice::from_mut(rng))?.remove(0))
}

/// [`determine_priority`] for several scenes at once, one rng per scene.
/// Each outcome equals what the scene would get on its own.
pub fn determine_priorities<R: Rng>(
    scenes: &[Tensor],
    net: &SeqCommNet,
    params: &ParamStore,
    config: &NegotiationConfig,
    rngs: &mut [R],
) -> Result<Vec<PriorityOutcome>> {
    config.validate()?;
    ensure!(!scenes.is_empty(), "no scenes to negotiate");
    ensure!(rngs.len() == scenes.len(), "{} rngs for {} scenes", rngs.len(), scenes.len());
    let mut eval = Batched {
        planner: Planner::new(net, params, config),
        scenes,
        rngs,
    };
    priority_levels(&mut eval)
}
