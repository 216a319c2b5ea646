//! Launching phase: agents act in priority order, each conditioning on the
//! actions of all upper-level agents.

use rand::Rng;

use super::comm::{count_messages, CommLog, Phase};
use super::negotiation::ActionChoice;
use super::OrderSequence;
use crate::error::{ensure, Result};
use crate::nn::{AgentBatch, Messages, SeqCommNet};
use crate::tensor::{ParamStore, Tensor};

/// What every agent did at one real timestep, indexed by agent.
#[derive(Clone, Debug, PartialEq)]
pub struct LaunchOutcome {
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    /// Upper-level action slots each agent saw when deciding.
    pub uppers: Vec<Vec<Option<usize>>>,
    pub comm: CommLog,
}

/// Runs the launching phase for one scene.
///
/// With `Messages::Full`, agent `order[k]` sees the actions of
/// `order[..k]`. Other message modes still act in order, but no action
/// reaches any agent.
pub fn launching_step<R: Rng>(
    order: &OrderSequence,
    joint_hidden: &Tensor,
    net: &SeqCommNet,
    params: &ParamStore,
    messages: Messages,
    choice: ActionChoice,
    rng: &mut R,
) -> Result<LaunchOutcome> {
    let mut out = launching_steps(
        std::slice::from_ref(order),
        joint_hidden,
        net,
        params,
        messages,
        choice,
        std::slice::from_mut(rng),
    )?;
    Ok(out.remove(0))
}

/// [`launching_step`] for `S` scenes stacked into one `[S * n, 48]` matrix,
/// one order and one rng per scene.
pub fn launching_steps<R: Rng>(
    orders: &[OrderSequence],
    hidden: &Tensor,
    net: &SeqCommNet,
    params: &ParamStore,
    messages: Messages,
    choice: ActionChoice,
    rngs: &mut [R],
) -> Result<Vec<LaunchOutcome>> {
    let scenes = orders.len();
    ensure!(scenes > 0 && rngs.len() == scenes, "{} rngs for {scenes} orders", rngs.len());
    ensure!(hidden.rank() == 2 && hidden.rows().is_multiple_of(scenes), "hidden rows do not split into {scenes} scenes");
    let n = hidden.rows() / scenes;
    for order in orders {
        ensure!(order.len() == n, "order over {} agents but {n} hidden rows per scene", order.len());
    }
    let mut slots: Vec<Vec<Option<usize>>> = vec![vec![None; n]; scenes];
    let mut out: Vec<LaunchOutcome> = (0..scenes)
        .map(|_| LaunchOutcome {
            actions: vec![0; n],
            log_probs: vec![0.0; n],
            values: vec![0.0; n],
            uppers: vec![Vec::new(); n],
            comm: CommLog::default(),
        })
        .collect();
    for level in 0..n {
        let mut batch = AgentBatch::default();
        for (s, order) in orders.iter().enumerate() {
            batch.push(s * n, n, order.agents()[level], &slots[s], messages);
        }
        let (dists, values) = net.act_and_value(params, hidden, &batch)?;
        for (s, order) in orders.iter().enumerate() {
            let agent = order.agents()[level];
            let action = choice.pick(&dists[s], &mut rngs[s]);
            let o = &mut out[s];
            o.uppers[agent] = if messages == Messages::Full { slots[s].clone() } else { vec![None; n] };
            o.actions[agent] = action;
            o.log_probs[agent] = dists[s].log_prob(action);
            o.values[agent] = values[s];
            slots[s][agent] = Some(action);
        }
    }
    if messages == Messages::Full {
        for o in &mut out {
            o.comm = count_messages(n, Phase::Launching);
        }
    }
    Ok(out)
}
