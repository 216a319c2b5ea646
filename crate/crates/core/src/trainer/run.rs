use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::buffer::{RolloutBuffer, WorldModelDataset};
use super::rollout::{ActionSource, Collected, Collector};
use super::update::{check_log_probs, update_policy, update_value, update_world_model};
use super::{OrderingMode, PpoConfig};
use crate::envs::EnvSpec;
use crate::error::{ensure, Result};
use crate::metrics::MetricsRecord;
use crate::nn::SeqCommNet;
use crate::protocol::{ActionChoice, CommLog, NegotiationConfig};
use crate::tensor::{Adam, AdamConfig, ParamStore};

/// Stored and recomputed log-probabilities must agree this closely.
pub const LOG_PROB_TOLERANCE: f64 = 1e-9;

const EVAL_STREAM: u64 = 1 << 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Evaluate after every `every` updates, and after the last one.
    pub every: u64,
    pub episodes: usize,
}

/// Everything one seeded training run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub run_id: String,
    pub seed: u64,
    pub env: EnvSpec,
    pub mode: OrderingMode,
    pub ppo: PpoConfig,
    pub negotiation: NegotiationConfig,
    pub eval: EvalConfig,
}

impl TrainConfig {
    /// Desk-scale defaults for `env`.
    pub fn defaults_for(env: EnvSpec, mode: OrderingMode, seed: u64) -> Self {
        let (ppo, negotiation, eval) = match &env {
            EnvSpec::MatrixGame(_) => (
                PpoConfig {
                    envs: 32,
                    total_env_steps: 3_200,
                    world_capacity: 256,
                    world_minibatch: 128,
                    ..PpoConfig::default()
                },
                NegotiationConfig {
                    horizon: 1,
                    samples: 1,
                    gamma: 0.95,
                    rollout_actions: ActionChoice::Greedy,
                },
                EvalConfig { every: 5, episodes: 1 },
            ),
            EnvSpec::Particle(_) => (
                PpoConfig {
                    policy_lr: 1e-3,
                    total_env_steps: 30_000,
                    ..PpoConfig::default()
                },
                NegotiationConfig {
                    horizon: 10,
                    samples: 2,
                    gamma: 0.95,
                    rollout_actions: ActionChoice::Greedy,
                },
                EvalConfig { every: 5, episodes: 8 },
            ),
        };
        Self {
            run_id: format!("{}-{}-{}", env.name(), mode, seed),
            seed,
            env,
            mode,
            ppo,
            negotiation,
            eval,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.mode.validate_for(self.env.n_agents())?;
        self.ppo.validate()?;
        self.negotiation.validate()?;
        ensure!(self.eval.every >= 1, "eval.every must be positive");
        ensure!(self.eval.episodes >= 1, "eval.episodes must be positive");
        Ok(())
    }
}

/// Losses and statistics of one collect-and-update cycle.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean_return: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub world_loss: Option<f64>,
    pub log_prob_gap: f64,
}

#[derive(Debug, Default)]
struct Window {
    returns: Vec<f64>,
    policy: Vec<f64>,
    value: Vec<f64>,
    world: Vec<f64>,
    comm: CommLog,
    orders: BTreeMap<String, u64>,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Final state of a finished run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub eval_returns: Vec<f64>,
    pub env_steps: u64,
    pub updates: u64,
}

impl TrainSummary {
    pub fn final_return(&self) -> f64 {
        self.eval_returns.last().copied().unwrap_or(f64::NAN)
    }

    /// Mean of the last `k` evaluation returns.
    pub fn tail_mean(&self, k: usize) -> f64 {
        let k = k.min(self.eval_returns.len());
        mean(&self.eval_returns[self.eval_returns.len() - k..])
    }
}

/// One seeded training run with parameters shared by all agents.
pub struct Trainer {
    config: TrainConfig,
    net: SeqCommNet,
    params: ParamStore,
    policy_opt: Adam,
    value_opt: Adam,
    world_opt: Adam,
    rng: ChaCha8Rng,
    env_rngs: Vec<ChaCha8Rng>,
    dataset: WorldModelDataset,
    updates: u64,
    env_steps: u64,
    episodes: u64,
    evals: u64,
    window: Window,
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(config.seed, 0);
        let mut params = ParamStore::new();
        let net = SeqCommNet::new(&mut params, config.env.obs_width(), config.env.n_actions(), &mut rng);
        let env_rngs = (0..config.ppo.envs as u64).map(|e| stream(config.seed, 1 + e)).collect();
        Ok(Self {
            policy_opt: Adam::new(AdamConfig::with_lr(config.ppo.policy_lr)),
            value_opt: Adam::new(AdamConfig::with_lr(config.ppo.value_lr)),
            world_opt: Adam::new(AdamConfig::with_lr(config.ppo.world_lr)),
            dataset: WorldModelDataset::new(config.ppo.world_capacity),
            config,
            net,
            params,
            rng,
            env_rngs,
            updates: 0,
            env_steps: 0,
            episodes: 0,
            evals: 0,
            window: Window::default(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn net(&self) -> &SeqCommNet {
        &self.net
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Replaces every parameter, e.g. from a checkpoint. Shapes must match.
    pub fn load_params(&mut self, params: ParamStore) -> Result<()> {
        ensure!(params.len() == self.params.len(), "parameter count mismatch");
        for id in self.params.ids().collect::<Vec<_>>() {
            let name = self.params.name(id).to_string();
            let src = params.find(&name).ok_or_else(|| crate::error::invalid(format!("missing parameter `{name}`")))?;
            self.params.set(id, params.get(src).clone())?;
        }
        Ok(())
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn dataset(&self) -> &WorldModelDataset {
        &self.dataset
    }

    fn collector(&self) -> Collector<'_> {
        Collector {
            env: &self.config.env,
            net: &self.net,
            params: &self.params,
            mode: &self.config.mode,
            negotiation: &self.config.negotiation,
        }
    }

    fn account(&mut self, c: &Collected) {
        self.env_steps += c.env_steps;
        self.episodes += c.buffer.episodes.len() as u64;
        self.window.comm += c.comm;
        for (k, v) in &c.orders {
            *self.window.orders.entry(k.clone()).or_insert(0) += v;
        }
    }

    /// Fits the world model on random-policy batches before the policy
    /// starts relying on it. A no-op for modes that never plan.
    pub fn warmup(&mut self) -> Result<Option<f64>> {
        if !self.config.mode.needs_world_model() || self.config.ppo.world_warmup_batches == 0 {
            return Ok(None);
        }
        let mut last = None;
        for _ in 0..self.config.ppo.world_warmup_batches {
            let mut rngs = std::mem::take(&mut self.env_rngs);
            let collected = self.collector().collect(ActionSource::Uniform, &mut rngs);
            self.env_rngs = rngs;
            let collected = collected?;
            self.env_steps += collected.env_steps;
            self.episodes += collected.buffer.episodes.len() as u64;
            self.dataset.extend(collected.transitions);
            last = Some(self.fit_world_model()?);
        }
        Ok(last)
    }

    fn fit_world_model(&mut self) -> Result<f64> {
        update_world_model(
            &self.net,
            &mut self.params,
            &mut self.world_opt,
            &self.dataset,
            self.config.ppo.world_minibatch,
            self.config.ppo.world_epochs,
            0.0,
            &mut self.rng,
        )
    }

    /// Collects one on-policy batch, updates on it, then drops it.
    pub fn train_batch(&mut self) -> Result<BatchStats> {
        let mut rngs = std::mem::take(&mut self.env_rngs);
        let collected = self
            .collector()
            .collect(ActionSource::Policy(ActionChoice::Sample), &mut rngs);
        self.env_rngs = rngs;
        let collected = collected?;
        self.account(&collected);
        let Collected {
            mut buffer, transitions, ..
        } = collected;
        let messages = self.config.mode.messages();
        let gap = check_log_probs(&self.net, &self.params, &buffer, messages, LOG_PROB_TOLERANCE)?;
        let ppo = self.config.ppo.clone();
        buffer.finalize(ppo.gamma, ppo.gae_lambda, true)?;
        let mean_return = mean(&buffer.episode_returns());
        let policy_loss = update_policy(&self.net, &mut self.params, &mut self.policy_opt, &buffer, messages, &ppo, &mut self.rng)?;
        let value_loss = update_value(&self.net, &mut self.params, &mut self.value_opt, &buffer, messages, &ppo, &mut self.rng)?;
        finish_on_policy(&mut buffer);
        let world_loss = if self.config.mode.needs_world_model() {
            self.dataset.extend(transitions);
            Some(self.fit_world_model()?)
        } else {
            None
        };
        self.updates += 1;
        self.window.returns.push(mean_return);
        self.window.policy.push(policy_loss);
        self.window.value.push(value_loss);
        if let Some(w) = world_loss {
            self.window.world.push(w);
        }
        Ok(BatchStats {
            mean_return,
            policy_loss,
            value_loss,
            world_loss,
            log_prob_gap: gap,
        })
    }

    /// Mean greedy return over the fixed evaluation episodes. Uses its own
    /// rng streams, so evaluating never perturbs training.
    pub fn evaluate(&self) -> Result<f64> {
        let mut rngs: Vec<ChaCha8Rng> = (0..self.config.eval.episodes as u64)
            .map(|e| stream(self.config.seed, EVAL_STREAM + e))
            .collect();
        let c = self.collector().collect(ActionSource::Policy(ActionChoice::Greedy), &mut rngs)?;
        Ok(mean(&c.buffer.episode_returns()))
    }

    fn record(&mut self, eval_return: f64) -> Result<MetricsRecord> {
        let w = std::mem::take(&mut self.window);
        let hyperparameters = if self.evals == 0 {
            Some(serde_json::to_value(&self.config)?)
        } else {
            None
        };
        let rec = MetricsRecord {
            run_id: self.config.run_id.clone(),
            seed: self.config.seed,
            env: self.config.env.name().to_string(),
            mode: self.config.mode.to_string(),
            eval_index: self.evals,
            updates: self.updates,
            env_steps: self.env_steps,
            episodes: self.episodes,
            eval_return,
            train_return: mean(&w.returns),
            policy_loss: mean(&w.policy),
            value_loss: mean(&w.value),
            world_loss: (!w.world.is_empty()).then(|| mean(&w.world)),
            comm: w.comm,
            orders: w.orders,
            hyperparameters,
        };
        self.evals += 1;
        Ok(rec)
    }

    /// Warmup, then batches until the step budget is spent, evaluating on
    /// the configured cadence. `on_record` sees every metrics record.
    pub fn run(&mut self, mut on_record: impl FnMut(&MetricsRecord) -> Result<()>) -> Result<TrainSummary> {
        self.warmup()?;
        let mut eval_returns = Vec::new();
        let mut since_eval = 0;
        while self.env_steps < self.config.ppo.total_env_steps {
            self.train_batch()?;
            since_eval += 1;
            let last = self.env_steps >= self.config.ppo.total_env_steps;
            if since_eval >= self.config.eval.every || last {
                since_eval = 0;
                let r = self.evaluate()?;
                eval_returns.push(r);
                let rec = self.record(r)?;
                on_record(&rec)?;
            }
        }
        Ok(TrainSummary {
            eval_returns,
            env_steps: self.env_steps,
            updates: self.updates,
        })
    }
}

fn finish_on_policy(buffer: &mut RolloutBuffer) {
    // samples from superseded parameters must never be reused
    buffer.clear();
}

/// Convenience: train with `config`, collecting the metrics records.
pub fn train(config: TrainConfig) -> Result<(TrainSummary, Vec<MetricsRecord>, Trainer)> {
    let mut trainer = Trainer::new(config)?;
    let mut records = Vec::new();
    let summary = trainer.run(|r| {
        records.push(r.clone());
        Ok(())
    })?;
    Ok((summary, records, trainer))
}
