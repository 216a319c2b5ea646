//! Parameter-shared networks: observation encoder, the two attention
//! modules, policy and critic heads, and the world model.
//!
//! Every agent runs the same parameters. Agent identity only enters through
//! which hidden-state row plays the query and which rows are peers.

mod attention;
mod layers;
mod world;

pub use attention::{Attention, AttentionModule};
pub use layers::Linear;
pub use world::WorldModelNet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::tensor::{one_hot, Eval, Ops, ParamStore, Tensor};

/// Width of the hidden state produced by the observation encoder.
pub const HIDDEN_WIDTH: usize = 48;
/// Width of the world model's action embedding.
pub const ACTION_EMBED_WIDTH: usize = 16;
/// Query/key width `d_k` of every attention module.
pub const KEY_WIDTH: usize = 32;
/// Width of attention value vectors (and hence of the context).
pub const VALUE_WIDTH: usize = 32;
/// Hidden width of the policy and critic MLPs.
pub const MLP_WIDTH: usize = 100;
/// Hidden width of the world-model decoder.
pub const DECODER_WIDTH: usize = 64;

/// What an acting agent receives from its peers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Messages {
    /// Peer hidden states plus the actions of upper-level peers.
    Full,
    /// Peer hidden states only; every action slot is zero.
    HiddenOnly,
    /// Nothing; the attention context is the zero vector.
    Isolated,
}

/// Single-layer `tanh` encoder shared by all agents.
#[derive(Clone, Debug)]
pub struct EncoderNet {
    layer: Linear,
}

impl EncoderNet {
    pub fn new<R: Rng>(store: &mut ParamStore, obs_width: usize, rng: &mut R) -> Self {
        Self {
            layer: Linear::new(store, "encoder", &[obs_width], HIDDEN_WIDTH, rng),
        }
    }

    pub fn obs_width(&self) -> usize {
        self.layer.in_widths()[0]
    }

    /// `[rows, obs_width] -> [rows, HIDDEN_WIDTH]`.
    pub fn forward<O: Ops>(&self, ops: &mut O, obs: &O::Var) -> Result<O::Var> {
        let pre = self.layer.forward(ops, &[obs])?;
        Ok(ops.tanh(&pre))
    }

    pub fn encode(&self, params: &ParamStore, observation: &[f64]) -> Result<Vec<f64>> {
        ensure!(
            observation.len() == self.obs_width(),
            "observation width {} does not match encoder width {}",
            observation.len(),
            self.obs_width()
        );
        let mut ev = Eval::new(params);
        let o = ev.constant(Tensor::matrix(1, observation.len(), observation.to_vec())?);
        let h = self.forward(&mut ev, &o)?;
        Ok(ev.value(&h).data().to_vec())
    }

    /// Encodes every row of a `[rows, obs_width]` observation matrix.
    pub fn encode_rows(&self, params: &ParamStore, observations: &Tensor) -> Result<Tensor> {
        ensure!(
            observations.rank() == 2 && observations.cols() == self.obs_width(),
            "observation matrix {:?} does not match encoder width {}",
            observations.shape(),
            self.obs_width()
        );
        let mut ev = Eval::new(params);
        let o = ev.constant(observations.clone());
        let h = self.forward(&mut ev, &o)?;
        Ok(ev.value(&h).clone())
    }
}

/// Two fully connected layers over `[own hidden ; attention context]`.
#[derive(Clone, Debug)]
pub struct MlpHead {
    hidden: Linear,
    out: Linear,
}

impl MlpHead {
    fn new<R: Rng>(store: &mut ParamStore, name: &str, out_width: usize, rng: &mut R) -> Self {
        Self {
            hidden: Linear::new(store, &format!("{name}.fc1"), &[HIDDEN_WIDTH, VALUE_WIDTH], MLP_WIDTH, rng),
            out: Linear::new(store, &format!("{name}.fc2"), &[MLP_WIDTH], out_width, rng),
        }
    }

    fn forward<O: Ops>(&self, ops: &mut O, own: &O::Var, context: &O::Var) -> Result<O::Var> {
        let z = self.hidden.forward(ops, &[own, context])?;
        let z = ops.tanh(&z);
        self.out.forward(ops, &[&z])
    }
}

/// Action-logit head.
#[derive(Clone, Debug)]
pub struct PolicyNet(MlpHead);

/// Scalar value head for `V(AM_a(h, upper actions))`.
#[derive(Clone, Debug)]
pub struct CriticNet(MlpHead);

/// A batch of acting agents whose hidden states are rows of one matrix.
///
/// Row `b` acts with query row `self_rows[b]`; its peers are
/// `peer_rows[b * peers .. (b + 1) * peers]` with matching action slots.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AgentBatch {
    pub self_rows: Vec<usize>,
    pub peer_rows: Vec<usize>,
    pub peer_actions: Vec<Option<usize>>,
    pub peers: usize,
}

impl AgentBatch {
    pub fn len(&self) -> usize {
        self.self_rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.self_rows.is_empty()
    }

    /// Appends agent `agent` of a scene whose `n` hidden rows start at `base`.
    ///
    /// `slots[j]` is the action of peer `j` if that peer is upper-level for
    /// this agent. All scenes in one batch must share `n` and `messages`.
    pub fn push(&mut self, base: usize, n: usize, agent: usize, slots: &[Option<usize>], messages: Messages) {
        self.self_rows.push(base + agent);
        if messages == Messages::Isolated {
            self.peers = 0;
            return;
        }
        self.peers = n - 1;
        for j in (0..n).filter(|&j| j != agent) {
            self.peer_rows.push(base + j);
            self.peer_actions.push(match messages {
                Messages::Full => slots[j],
                _ => None,
            });
        }
    }
}

/// Categorical action distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct Categorical {
    pub probs: Vec<f64>,
}

impl Categorical {
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        Ok(Self {
            probs: crate::tensor::softmax(logits)?,
        })
    }

    /// Most likely action; ties go to the lowest index.
    pub fn mode(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.probs.len() - 1
    }

    pub fn log_prob(&self, action: usize) -> f64 {
        self.probs[action].ln()
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Every network of one SeqComm agent; all agents share it.
#[derive(Clone, Debug)]
pub struct SeqCommNet {
    pub encoder: EncoderNet,
    /// `AM_a`, shared by policy and critic.
    pub comm: AttentionModule,
    pub policy: PolicyNet,
    pub critic: CriticNet,
    pub world: WorldModelNet,
    n_actions: usize,
}

impl SeqCommNet {
    /// Registers all parameters into `store` with fan-in uniform initialization.
    pub fn new<R: Rng>(store: &mut ParamStore, obs_width: usize, n_actions: usize, rng: &mut R) -> Self {
        let encoder = EncoderNet::new(store, obs_width, rng);
        let comm = AttentionModule::new(
            store,
            "comm",
            &[HIDDEN_WIDTH],
            &[HIDDEN_WIDTH, n_actions],
            KEY_WIDTH,
            VALUE_WIDTH,
            rng,
        );
        let policy = PolicyNet(MlpHead::new(store, "policy", n_actions, rng));
        let critic = CriticNet(MlpHead::new(store, "critic", 1, rng));
        let world = WorldModelNet::new(store, obs_width, n_actions, rng);
        Self {
            encoder,
            comm,
            policy,
            critic,
            world,
            n_actions,
        }
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn obs_width(&self) -> usize {
        self.encoder.obs_width()
    }

    /// Own hidden rows `[B, 48]` and `AM_a` contexts `[B, VALUE_WIDTH]`.
    pub fn context<O: Ops>(&self, ops: &mut O, hidden: &O::Var, batch: &AgentBatch) -> Result<(O::Var, O::Var)> {
        let own = ops.gather_rows(hidden, &batch.self_rows)?;
        if batch.peers == 0 {
            let zeros = ops.constant(Tensor::zeros(&[batch.len(), VALUE_WIDTH]));
            return Ok((own, zeros));
        }
        ensure!(
            batch.peer_rows.len() == batch.len() * batch.peers,
            "agent batch has {} peer rows for {} agents x {} peers",
            batch.peer_rows.len(),
            batch.len(),
            batch.peers
        );
        let peer_h = ops.gather_rows(hidden, &batch.peer_rows)?;
        let peer_a = ops.constant(one_hot(&batch.peer_actions, self.n_actions)?);
        let att = self.comm.attend(ops, &[&own], &[&peer_h, &peer_a], None, batch.peers)?;
        Ok((own, att.context))
    }

    /// Action logits `[B, n_actions]`.
    pub fn logits<O: Ops>(&self, ops: &mut O, own: &O::Var, context: &O::Var) -> Result<O::Var> {
        self.policy.0.forward(ops, own, context)
    }

    /// Value estimates `[B, 1]`.
    pub fn value<O: Ops>(&self, ops: &mut O, own: &O::Var, context: &O::Var) -> Result<O::Var> {
        self.critic.0.forward(ops, own, context)
    }

    /// Action distributions for a batch of agents, without recording.
    pub fn distributions(&self, params: &ParamStore, hidden: &Tensor, batch: &AgentBatch) -> Result<Vec<Categorical>> {
        let mut ev = Eval::new(params);
        let h = ev.constant(hidden.clone());
        let (own, ctx) = self.context(&mut ev, &h, batch)?;
        let logits = self.logits(&mut ev, &own, &ctx)?;
        let logits = ev.value(&logits);
        (0..batch.len()).map(|r| Categorical::from_logits(logits.row(r))).collect()
    }

    /// Distributions and value estimates for a batch of agents.
    pub fn act_and_value(
        &self,
        params: &ParamStore,
        hidden: &Tensor,
        batch: &AgentBatch,
    ) -> Result<(Vec<Categorical>, Vec<f64>)> {
        let mut ev = Eval::new(params);
        let h = ev.constant(hidden.clone());
        let (own, ctx) = self.context(&mut ev, &h, batch)?;
        let logits = self.logits(&mut ev, &own, &ctx)?;
        let values = self.value(&mut ev, &own, &ctx)?;
        let dists = (0..batch.len())
            .map(|r| Categorical::from_logits(ev.value(&logits).row(r)))
            .collect::<Result<_>>()?;
        Ok((dists, ev.value(&values).data().to_vec()))
    }

    /// One agent's action distribution from its own hidden state, its
    /// peers' hidden states and the peers' action slots (`Some` for
    /// upper-level peers). An empty peer list is the isolated case.
    pub fn policy_forward(
        &self,
        params: &ParamStore,
        own: &[f64],
        peers: &[Vec<f64>],
        peer_actions: &[Option<usize>],
    ) -> Result<Categorical> {
        ensure!(
            peers.len() == peer_actions.len(),
            "{} peers but {} action slots",
            peers.len(),
            peer_actions.len()
        );
        for a in peer_actions.iter().flatten() {
            ensure!(*a < self.n_actions, "action {a} out of range for {} actions", self.n_actions);
        }
        let mut rows = vec![own.to_vec()];
        rows.extend(peers.iter().cloned());
        let hidden = Tensor::from_rows(&rows)?;
        ensure!(hidden.cols() == HIDDEN_WIDTH, "hidden states must have width {HIDDEN_WIDTH}");
        let batch = AgentBatch {
            self_rows: vec![0],
            peer_rows: (1..rows.len()).collect(),
            peer_actions: peer_actions.to_vec(),
            peers: peers.len(),
        };
        Ok(self.distributions(params, &hidden, &batch)?.remove(0))
    }

    /// Predicted next joint observations (`n * obs_width`) and team reward.
    pub fn world_forward(&self, params: &ParamStore, joint_hidden: &Tensor, joint_actions: &[usize]) -> Result<(Vec<f64>, f64)> {
        let (obs, reward) = self.world.predict(params, joint_hidden, joint_actions, joint_actions.len())?;
        Ok((obs.into_data(), reward[0]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(obs_width: usize, n_actions: usize, seed: u64) -> (SeqCommNet, ParamStore) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = SeqCommNet::new(&mut store, obs_width, n_actions, &mut rng);
        (net, store)
    }

    #[test]
    fn encoder_width_and_determinism() {
        let (net, store) = net(10, 5, 1);
        let obs = vec![0.3; 10];
        let h = net.encoder.encode(&store, &obs).unwrap();
        assert_eq!(h.len(), 48);
        assert_eq!(h, net.encoder.encode(&store, &obs).unwrap());
        assert!(net.encoder.encode(&store, &[0.0; 9]).is_err());
    }

    #[test]
    fn zero_weights_give_zero_hidden() {
        let (net, mut store) = net(4, 3, 2);
        for id in store.ids().collect::<Vec<_>>() {
            let shape = store.get(id).shape().to_vec();
            store.set(id, Tensor::zeros(&shape)).unwrap();
        }
        let h = net.encoder.encode(&store, &[0.0; 4]).unwrap();
        assert!(h.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn policy_action_counts() {
        let (m, ms) = net(2, 3, 3);
        let h = m.encoder.encode(&ms, &[1.0, 0.0]).unwrap();
        let peer = m.encoder.encode(&ms, &[0.0, 1.0]).unwrap();
        let d = m.policy_forward(&ms, &h, &[peer], &[None]).unwrap();
        assert_eq!(d.len(), 3);
        assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let (p, ps) = net(10, 5, 4);
        let h = p.encoder.encode(&ps, &[0.1; 10]).unwrap();
        let d = p.policy_forward(&ps, &h, &[], &[]).unwrap();
        assert_eq!(d.len(), 5);
    }

    #[test]
    fn out_of_range_upper_action_is_rejected() {
        let (m, ms) = net(2, 3, 5);
        let h = vec![0.0; 48];
        assert!(m.policy_forward(&ms, &h, std::slice::from_ref(&h), &[Some(3)]).is_err());
    }

    #[test]
    fn upper_action_changes_logits() {
        let mut differs = 0;
        for seed in 0..20 {
            let (m, ms) = net(10, 5, 100 + seed);
            let h = m.encoder.encode(&ms, &[0.2; 10]).unwrap();
            let peer = m.encoder.encode(&ms, &[-0.4; 10]).unwrap();
            let a = m.policy_forward(&ms, &h, std::slice::from_ref(&peer), &[Some(1)]).unwrap();
            let b = m.policy_forward(&ms, &h, &[peer], &[Some(2)]).unwrap();
            if a != b {
                differs += 1;
            }
        }
        assert!(differs >= 19, "only {differs}/20 nets reacted to the upper action");
    }

    #[test]
    fn categorical_mode_breaks_ties_low() {
        let c = Categorical { probs: vec![0.4, 0.4, 0.2] };
        assert_eq!(c.mode(), 0);
    }

    #[test]
    fn batched_and_single_forwards_agree_bitwise() {
        let (m, ms) = net(10, 5, 9);
        let obs = Tensor::from_rows(&[vec![0.1; 10], vec![-0.2; 10], vec![0.5; 10]]).unwrap();
        let hidden = m.encoder.encode_rows(&ms, &obs).unwrap();
        let slots = [Some(4), None, Some(0)];
        let mut batch = AgentBatch::default();
        for agent in 0..3 {
            batch.push(0, 3, agent, &slots, Messages::Full);
        }
        let all = m.distributions(&ms, &hidden, &batch).unwrap();
        let peers: Vec<Vec<f64>> = vec![hidden.row(0).to_vec(), hidden.row(2).to_vec()];
        let single = m.policy_forward(&ms, hidden.row(1), &peers, &[Some(4), Some(0)]).unwrap();
        assert_eq!(all[1], single);
    }
}
