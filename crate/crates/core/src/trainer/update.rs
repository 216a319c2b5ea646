use rand::seq::SliceRandom;
use rand::Rng;

use super::buffer::{RolloutBuffer, StepRecord, WorldModelDataset, WorldTransition};
use super::ppo::{clip_target, PpoConfig};
use crate::error::{ensure, Result};
use crate::nn::{AgentBatch, Messages, SeqCommNet};
use crate::tensor::{Adam, Eval, Gradients, Ops, ParamStore, Tape, Tensor};

fn stack_obs<'a>(rows: impl Iterator<Item = &'a Tensor>) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut count = 0;
    let mut width = 0;
    for t in rows {
        data.extend_from_slice(t.data());
        count += t.rows();
        width = t.cols();
    }
    Tensor::matrix(count, width, data)
}

/// Own hidden rows and `AM_a` contexts for every agent of every step, in
/// step-major order, recomputed from the stored observations.
fn agent_forward<O: Ops>(
    ops: &mut O,
    net: &SeqCommNet,
    steps: &[&StepRecord],
    messages: Messages,
) -> Result<(O::Var, O::Var)> {
    let n = steps[0].actions.len();
    let obs = ops.constant(stack_obs(steps.iter().map(|s| &s.observations))?);
    let hidden = net.encoder.forward(ops, &obs)?;
    let mut batch = AgentBatch::default();
    for (t, step) in steps.iter().enumerate() {
        for agent in 0..n {
            batch.push(t * n, n, agent, &step.uppers[agent], messages);
        }
    }
    net.context(ops, &hidden, &batch)
}

fn flat_actions(steps: &[&StepRecord]) -> Vec<usize> {
    steps.iter().flat_map(|s| s.actions.iter().copied()).collect()
}

fn clip_gradients(grads: &mut Gradients, max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grads.norm_sq().sqrt();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
}

fn minibatches<R: Rng>(len: usize, count: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(rng);
    let count = count.clamp(1, len.max(1));
    let size = len.div_ceil(count);
    idx.chunks(size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Log-probabilities of the stored actions under the current parameters.
pub fn recompute_log_probs(net: &SeqCommNet, params: &ParamStore, buffer: &RolloutBuffer, messages: Messages) -> Result<Vec<Vec<f64>>> {
    ensure!(!buffer.is_empty(), "empty rollout buffer");
    let steps: Vec<&StepRecord> = buffer.steps.iter().collect();
    let n = steps[0].actions.len();
    let mut ev = Eval::new(params);
    let (own, ctx) = agent_forward(&mut ev, net, &steps, messages)?;
    let logits = net.logits(&mut ev, &own, &ctx)?;
    let probs = ev.softmax(&logits)?;
    let picked = ev.pick(&probs, &flat_actions(&steps))?;
    let lp: Vec<f64> = ev.value(&picked).data().iter().map(|p| p.ln()).collect();
    Ok(lp.chunks(n).map(<[f64]>::to_vec).collect())
}

/// Largest gap between stored and recomputed log-probabilities; errors
/// when it exceeds `tol`.
pub fn check_log_probs(net: &SeqCommNet, params: &ParamStore, buffer: &RolloutBuffer, messages: Messages, tol: f64) -> Result<f64> {
    let fresh = recompute_log_probs(net, params, buffer, messages)?;
    let mut worst = 0.0f64;
    for (step, lp) in buffer.steps.iter().zip(&fresh) {
        for (a, b) in step.log_probs.iter().zip(lp) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure!(worst <= tol, "stored log-probs drift from the policy by {worst:e} (tolerance {tol:e})");
    Ok(worst)
}

/// Mean clipped surrogate of the whole buffer under the current parameters.
pub fn surrogate_objective(net: &SeqCommNet, params: &ParamStore, buffer: &RolloutBuffer, messages: Messages, epsilon: f64) -> Result<f64> {
    ensure!(buffer.is_finalized(), "buffer has no advantages yet");
    let fresh = recompute_log_probs(net, params, buffer, messages)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for ((step, lp), adv) in buffer.steps.iter().zip(&fresh).zip(&buffer.advantages) {
        for i in 0..lp.len() {
            let ratio = (lp[i] - step.log_probs[i]).exp();
            total += super::ppo_clip_objective(ratio, adv[i], epsilon);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// PPO-clip epochs over the buffer. Returns the mean minibatch loss
/// `-(surrogate + entropy_coef * entropy)`.
pub fn update_policy<R: Rng>(
    net: &SeqCommNet,
    params: &mut ParamStore,
    opt: &mut Adam,
    buffer: &RolloutBuffer,
    messages: Messages,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<f64> {
    ensure!(buffer.is_finalized(), "policy update needs advantages; finalize the buffer first");
    let mut losses = Vec::new();
    for _ in 0..cfg.epochs {
        for mb in minibatches(buffer.len(), cfg.minibatches, rng) {
            let steps: Vec<&StepRecord> = mb.iter().map(|&i| &buffer.steps[i]).collect();
            let adv: Vec<f64> = mb.iter().flat_map(|&i| buffer.advantages[i].iter().copied()).collect();
            let old: Vec<f64> = steps.iter().flat_map(|s| s.log_probs.iter().copied()).collect();
            let target: Vec<f64> = adv.iter().map(|&a| clip_target(a, cfg.clip_epsilon)).collect();
            let m = adv.len();
            let grads = {
                let mut tape = Tape::new(params);
                let (own, ctx) = agent_forward(&mut tape, net, &steps, messages)?;
                let logits = net.logits(&mut tape, &own, &ctx)?;
                let probs = tape.softmax(&logits)?;
                let log_probs = tape.log(&probs);
                let picked = tape.pick(&log_probs, &flat_actions(&steps))?;
                let old = tape.constant(Tensor::vector(old));
                let diff = tape.sub(&picked, &old)?;
                let ratio = tape.exp(&diff);
                let adv = tape.constant(Tensor::vector(adv));
                let target = tape.constant(Tensor::vector(target));
                let surr = tape.mul(&ratio, &adv)?;
                let surr = tape.minimum(&surr, &target)?;
                let surr = tape.mean(&surr);
                let plogp = tape.mul(&probs, &log_probs)?;
                let neg_entropy = tape.sum_last(&plogp);
                let neg_entropy = tape.mean(&neg_entropy);
                let ent_term = tape.scale(&neg_entropy, cfg.entropy_coef);
                let neg_surr = tape.scale(&surr, -1.0);
                let loss = tape.add(&neg_surr, &ent_term)?;
                let value = tape.value(&loss).item()?;
                ensure!(value.is_finite(), "policy loss became non-finite over {m} samples");
                losses.push(value);
                tape.backward(loss)?
            };
            let mut grads = grads;
            clip_gradients(&mut grads, cfg.max_grad_norm);
            opt.step(params, &grads)?;
        }
    }
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Mean squared error of the critic against the stored returns.
pub fn value_loss(net: &SeqCommNet, params: &ParamStore, buffer: &RolloutBuffer, messages: Messages) -> Result<f64> {
    ensure!(buffer.is_finalized(), "value loss needs returns; finalize the buffer first");
    let steps: Vec<&StepRecord> = buffer.steps.iter().collect();
    let mut ev = Eval::new(params);
    let (own, ctx) = agent_forward(&mut ev, net, &steps, messages)?;
    let v = net.value(&mut ev, &own, &ctx)?;
    let targets: Vec<f64> = buffer.returns.iter().flatten().copied().collect();
    let sq: f64 = ev.value(&v).data().iter().zip(&targets).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(sq / targets.len() as f64)
}

/// Regression of the critic onto the returns. Returns the mean minibatch
/// loss before each step.
pub fn update_value<R: Rng>(
    net: &SeqCommNet,
    params: &mut ParamStore,
    opt: &mut Adam,
    buffer: &RolloutBuffer,
    messages: Messages,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<f64> {
    ensure!(buffer.is_finalized(), "value update needs returns; finalize the buffer first");
    let mut losses = Vec::new();
    for _ in 0..cfg.epochs {
        for mb in minibatches(buffer.len(), cfg.minibatches, rng) {
            let steps: Vec<&StepRecord> = mb.iter().map(|&i| &buffer.steps[i]).collect();
            let targets: Vec<f64> = mb.iter().flat_map(|&i| buffer.returns[i].iter().copied()).collect();
            let m = targets.len();
            let mut grads = {
                let mut tape = Tape::new(params);
                let (own, ctx) = agent_forward(&mut tape, net, &steps, messages)?;
                let v = net.value(&mut tape, &own, &ctx)?;
                let v = tape.reshape(&v, &[m])?;
                let t = tape.constant(Tensor::vector(targets));
                let d = tape.sub(&v, &t)?;
                let sq = tape.square(&d);
                let loss = tape.mean(&sq);
                losses.push(tape.value(&loss).item()?);
                tape.backward(loss)?
            };
            clip_gradients(&mut grads, cfg.max_grad_norm);
            opt.step(params, &grads)?;
        }
    }
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

fn world_loss_on<O: Ops>(ops: &mut O, net: &SeqCommNet, params: &ParamStore, batch: &[&WorldTransition]) -> Result<O::Var> {
    let n = batch[0].actions.len();
    let obs = stack_obs(batch.iter().map(|t| &t.observations))?;
    // the encoder is trained by the policy and critic only
    let hidden = net.encoder.encode_rows(params, &obs)?;
    let hidden = ops.constant(hidden);
    let actions: Vec<usize> = batch.iter().flat_map(|t| t.actions.iter().copied()).collect();
    let (pred_obs, pred_r) = net.world.forward(ops, &hidden, &actions, n)?;
    let target_obs = ops.constant(stack_obs(batch.iter().map(|t| &t.next_observations))?);
    let target_r = ops.constant(Tensor::vector(batch.iter().map(|t| t.reward).collect()));
    let d_obs = ops.sub(&pred_obs, &target_obs)?;
    let d_obs = ops.square(&d_obs);
    let d_obs = ops.sum(&d_obs);
    let d_r = ops.sub(&pred_r, &target_r)?;
    let d_r = ops.square(&d_r);
    let d_r = ops.sum(&d_r);
    let total = ops.add(&d_obs, &d_r)?;
    let count = batch.len() * (n * net.obs_width() + 1);
    Ok(ops.scale(&total, 1.0 / count as f64))
}

/// Mean squared error over concatenated `(next joint observation, reward)`
/// targets.
pub fn world_model_loss(net: &SeqCommNet, params: &ParamStore, batch: &[&WorldTransition]) -> Result<f64> {
    ensure!(!batch.is_empty(), "world-model loss needs at least one transition");
    let mut ev = Eval::new(params);
    let loss = world_loss_on(&mut ev, net, params, batch)?;
    ev.value(&loss).item()
}

/// `epochs` shuffled minibatch passes over the dataset. Returns the mean
/// minibatch loss before each step.
#[allow(clippy::too_many_arguments)]
pub fn update_world_model<R: Rng>(
    net: &SeqCommNet,
    params: &mut ParamStore,
    opt: &mut Adam,
    dataset: &WorldModelDataset,
    minibatch: usize,
    epochs: usize,
    max_grad_norm: f64,
    rng: &mut R,
) -> Result<f64> {
    ensure!(!dataset.is_empty(), "world-model dataset is empty");
    ensure!(minibatch >= 1, "minibatch must be positive");
    let mut losses = Vec::new();
    for _ in 0..epochs {
        let count = dataset.len().div_ceil(minibatch);
        for mb in minibatches(dataset.len(), count, rng) {
            let batch: Vec<&WorldTransition> = mb.iter().map(|&i| dataset.get(i)).collect();
            let mut grads = {
                let mut tape = Tape::new(params);
                let loss = world_loss_on(&mut tape, net, params, &batch)?;
                losses.push(tape.value(&loss).item()?);
                tape.backward(loss)?
            };
            clip_gradients(&mut grads, max_grad_norm);
            opt.step(params, &grads)?;
        }
    }
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}
