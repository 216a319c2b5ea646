use rand::Rng;

use super::{AttentionModule, Linear, ACTION_EMBED_WIDTH, DECODER_WIDTH, HIDDEN_WIDTH, KEY_WIDTH, VALUE_WIDTH};
use crate::error::{ensure, Result};
use crate::tensor::{one_hot, Eval, Ops, ParamStore, Tensor};

/// Learned dynamics: joint hidden states and joint actions to next joint
/// observations and team reward.
///
/// Each agent's entry is `[h_j ; tanh(embed(a_j))]`. Every agent queries all
/// `n` entries of its scene (itself included) through `AM_w`, so the same
/// parameters serve any agent count. A per-agent decoder emits that agent's
/// next observation and a reward share; the team reward is the sum of shares.
#[derive(Clone, Debug)]
pub struct WorldModelNet {
    action_embed: Linear,
    attention: AttentionModule,
    decoder: Linear,
    obs_head: Linear,
    reward_head: Linear,
    n_actions: usize,
}

impl WorldModelNet {
    pub fn new<R: Rng>(store: &mut ParamStore, obs_width: usize, n_actions: usize, rng: &mut R) -> Self {
        let entry = [HIDDEN_WIDTH, ACTION_EMBED_WIDTH];
        Self {
            action_embed: Linear::new(store, "world.action", &[n_actions], ACTION_EMBED_WIDTH, rng),
            attention: AttentionModule::new(store, "world.attn", &entry, &entry, KEY_WIDTH, VALUE_WIDTH, rng),
            decoder: Linear::new(
                store,
                "world.decoder",
                &[HIDDEN_WIDTH, ACTION_EMBED_WIDTH, VALUE_WIDTH],
                DECODER_WIDTH,
                rng,
            ),
            obs_head: Linear::new(store, "world.obs", &[DECODER_WIDTH], obs_width, rng),
            reward_head: Linear::new(store, "world.reward", &[DECODER_WIDTH], 1, rng),
            n_actions,
        }
    }

    pub fn obs_width(&self) -> usize {
        self.obs_head.out_width()
    }

    /// `hidden` is `[R * n, 48]`, scene-major. Returns per-agent observation
    /// predictions `[R * n, obs_width]` and team rewards `[R]`.
    pub fn forward<O: Ops>(&self, ops: &mut O, hidden: &O::Var, actions: &[usize], n: usize) -> Result<(O::Var, O::Var)> {
        let rows = ops.value(hidden).rows();
        ensure!(n > 0, "world model needs at least one agent");
        ensure!(
            rows == actions.len() && rows % n == 0,
            "world model got {} hidden states for {} actions (n = {})",
            rows,
            actions.len(),
            n
        );
        let scenes = rows / n;
        let slots: Vec<Option<usize>> = actions.iter().map(|&a| Some(a)).collect();
        let a = ops.constant(one_hot(&slots, self.n_actions)?);
        let embed = self.action_embed.forward(ops, &[&a])?;
        let embed = ops.tanh(&embed);

        let index: Vec<usize> = (0..scenes)
            .flat_map(|r| (0..n).flat_map(move |_| (0..n).map(move |j| r * n + j)))
            .collect();
        let att = self
            .attention
            .attend(ops, &[hidden, &embed], &[hidden, &embed], Some(&index), n)?;
        let z = self.decoder.forward(ops, &[hidden, &embed, &att.context])?;
        let z = ops.tanh(&z);
        let obs = self.obs_head.forward(ops, &[&z])?;
        let share = self.reward_head.forward(ops, &[&z])?;
        let share = ops.reshape(&share, &[scenes, n])?;
        let reward = ops.sum_last(&share);
        Ok((obs, reward))
    }

    /// Eager prediction for `R` scenes: `([R, n * obs_width], rewards)`.
    pub fn predict(&self, params: &ParamStore, hidden: &Tensor, actions: &[usize], n: usize) -> Result<(Tensor, Vec<f64>)> {
        for &a in actions {
            ensure!(a < self.n_actions, "action {a} out of range for {} actions", self.n_actions);
        }
        ensure!(
            hidden.rank() == 2 && hidden.cols() == HIDDEN_WIDTH,
            "hidden states must be a [rows, {HIDDEN_WIDTH}] matrix, got {:?}",
            hidden.shape()
        );
        let mut ev = Eval::new(params);
        let h = ev.constant(hidden.clone());
        let (obs, reward) = self.forward(&mut ev, &h, actions, n)?;
        let scenes = hidden.rows() / n;
        let obs = ev.value(&obs).clone().reshaped(vec![scenes, n * self.obs_width()])?;
        Ok((obs, ev.value(&reward).data().to_vec()))
    }
}
