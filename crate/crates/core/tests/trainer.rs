use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqcomm::envs::EnvSpec;
use seqcomm::nn::SeqCommNet;
use seqcomm::protocol::{ActionChoice, NegotiationConfig, OrderSequence};
use seqcomm::tensor::{Adam, AdamConfig, ParamStore};
use seqcomm::trainer::{
    check_log_probs, compute_gae, recompute_log_probs, surrogate_objective, update_policy, update_value,
    update_world_model, value_loss, world_model_loss, ActionSource, Collected, Collector, OrderingMode, PpoConfig,
    WorldModelDataset, WorldTransition, LOG_PROB_TOLERANCE,
};

struct Setup {
    env: EnvSpec,
    net: SeqCommNet,
    params: ParamStore,
    negotiation: NegotiationConfig,
}

fn setup(env: EnvSpec, seed: u64) -> Setup {
    let mut params = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = SeqCommNet::new(&mut params, env.obs_width(), env.n_actions(), &mut rng);
    let negotiation = NegotiationConfig { horizon: 2, samples: 1, gamma: 0.95, rollout_actions: ActionChoice::Greedy };
    Setup { env, net, params, negotiation }
}

fn rngs(seed: u64, envs: usize) -> Vec<ChaCha8Rng> {
    (0..envs as u64).map(|e| ChaCha8Rng::seed_from_u64(seed * 1000 + e)).collect()
}

fn collect(s: &Setup, mode: &OrderingMode, source: ActionSource, seed: u64, envs: usize) -> Collected {
    let c = Collector { env: &s.env, net: &s.net, params: &s.params, mode, negotiation: &s.negotiation };
    c.collect(source, &mut rngs(seed, envs)).unwrap()
}

fn sampled(s: &Setup, mode: &OrderingMode, envs: usize) -> Collected {
    collect(s, mode, ActionSource::Policy(ActionChoice::Sample), 3, envs)
}

fn snapshot(p: &ParamStore) -> Vec<Vec<u64>> {
    p.ids().map(|id| p.get(id).data().iter().map(|x| x.to_bits()).collect()).collect()
}

#[test]
fn simultaneous_agents_see_no_actions() {
    let s = setup(EnvSpec::particle(3), 1);
    let c = sampled(&s, &OrderingMode::Simultaneous, 2);
    assert!(c.buffer.steps.iter().all(|st| st.uppers.iter().flatten().all(Option::is_none)));
    assert_eq!(c.comm.action_messages, 0);
    assert!(c.comm.hidden_state_broadcasts > 0);
}

#[test]
fn fixed_order_is_used_at_every_step() {
    let s = setup(EnvSpec::particle(3), 2);
    let order = OrderSequence::new(vec![2, 0, 1]).unwrap();
    let c = sampled(&s, &OrderingMode::Fixed(order.clone()), 2);
    assert_eq!(c.orders.len(), 1);
    assert_eq!(c.orders["2-0-1"], 40);
    for st in &c.buffer.steps {
        assert_eq!(st.order, order);
        assert_eq!(st.uppers[2], vec![None, None, None]);
        assert_eq!(st.uppers[0], vec![None, None, Some(st.actions[2])]);
        assert_eq!(st.uppers[1], vec![Some(st.actions[0]), None, Some(st.actions[2])]);
    }
}

#[test]
fn no_comm_sends_nothing() {
    let s = setup(EnvSpec::particle(3), 3);
    let c = sampled(&s, &OrderingMode::NoComm, 1);
    assert_eq!(c.comm, seqcomm::protocol::CommLog::default());
}

#[test]
fn seeded_seqcomm_collection_replays_exactly() {
    let s = setup(EnvSpec::particle(3), 4);
    let a = sampled(&s, &OrderingMode::SeqComm, 2);
    let b = sampled(&s, &OrderingMode::SeqComm, 2);
    assert_eq!(a.buffer, b.buffer);
    assert_eq!(a.transitions, b.transitions);
    assert_eq!(a.comm, b.comm);
    assert_eq!(a.env_steps, 40);
}

#[test]
fn environments_are_independent_of_batch_width() {
    let s = setup(EnvSpec::particle(3), 5);
    let one = collect(&s, &OrderingMode::Random, ActionSource::Policy(ActionChoice::Sample), 9, 1);
    let three = collect(&s, &OrderingMode::Random, ActionSource::Policy(ActionChoice::Sample), 9, 3);
    assert_eq!(one.buffer.steps[..], three.buffer.steps[..20]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn gae_without_lambda_is_the_td_residual(
        rv in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..30),
        gamma in 0.01f64..1.0,
    ) {
        let (r, v): (Vec<f64>, Vec<f64>) = rv.into_iter().unzip();
        let (adv, ret) = compute_gae(&r, &v, 0.0, gamma, 0.0).unwrap();
        for t in 0..r.len() {
            let next = if t + 1 < r.len() { v[t + 1] } else { 0.0 };
            prop_assert!((adv[t] - (r[t] + gamma * next - v[t])).abs() <= 1e-9);
            prop_assert!((ret[t] - adv[t] - v[t]).abs() <= 1e-12);
        }
    }

    #[test]
    fn full_lambda_is_the_discounted_return_minus_value(
        rv in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..30),
        gamma in 0.01f64..1.0,
    ) {
        let (r, v): (Vec<f64>, Vec<f64>) = rv.into_iter().unzip();
        let (adv, _) = compute_gae(&r, &v, 0.0, gamma, 1.0).unwrap();
        for t in 0..r.len() {
            let g: f64 = r[t..].iter().enumerate().map(|(k, x)| gamma.powi(k as i32) * x).sum();
            prop_assert!((adv[t] - (g - v[t])).abs() <= 1e-9);
        }
    }
}

#[test]
fn value_loss_against_known_targets() {
    let s = setup(EnvSpec::particle(3), 6);
    let mode = OrderingMode::Random;
    let mut c = sampled(&s, &mode, 2);
    c.buffer.finalize(0.95, 0.95, true).unwrap();
    c.buffer.returns = c.buffer.steps.iter().map(|st| st.values.clone()).collect();
    assert!(value_loss(&s.net, &s.params, &c.buffer, mode.messages()).unwrap() < 1e-20);
    c.buffer.returns = c.buffer.steps.iter().map(|st| st.values.iter().map(|v| v + 1.0).collect()).collect();
    let before = value_loss(&s.net, &s.params, &c.buffer, mode.messages()).unwrap();
    assert!((before - 1.0).abs() < 1e-9);
    let mut params = s.params.clone();
    let mut opt = Adam::new(AdamConfig::with_lr(1e-3));
    let cfg = PpoConfig { epochs: 10, ..PpoConfig::default() };
    update_value(&s.net, &mut params, &mut opt, &c.buffer, mode.messages(), &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(value_loss(&s.net, &params, &c.buffer, mode.messages()).unwrap() < before);
}

#[test]
fn zero_advantages_leave_the_policy_alone() {
    let s = setup(EnvSpec::particle(3), 7);
    let mode = OrderingMode::Fixed(OrderSequence::identity(3));
    let mut c = sampled(&s, &mode, 2);
    c.buffer.finalize(0.95, 0.95, false).unwrap();
    for row in &mut c.buffer.advantages {
        row.iter_mut().for_each(|a| *a = 0.0);
    }
    let mut params = s.params.clone();
    let mut opt = Adam::new(AdamConfig::with_lr(1e-2));
    let cfg = PpoConfig { entropy_coef: 0.0, ..PpoConfig::default() };
    update_policy(&s.net, &mut params, &mut opt, &c.buffer, mode.messages(), &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(snapshot(&params), snapshot(&s.params));
}

#[test]
fn unit_ratio_surrogate_is_the_mean_advantage() {
    let s = setup(EnvSpec::particle(3), 8);
    let mode = OrderingMode::SeqComm;
    let mut c = sampled(&s, &mode, 1);
    c.buffer.finalize(0.95, 0.95, false).unwrap();
    let flat: Vec<f64> = c.buffer.advantages.iter().flatten().copied().collect();
    let mean = flat.iter().sum::<f64>() / flat.len() as f64;
    let surr = surrogate_objective(&s.net, &s.params, &c.buffer, mode.messages(), 0.2).unwrap();
    assert!((surr - mean).abs() < 1e-9, "{surr} vs {mean}");
}

#[test]
fn stored_log_probs_match_recomputation() {
    let s = setup(EnvSpec::particle(3), 9);
    for mode in [OrderingMode::SeqComm, OrderingMode::Random, OrderingMode::Simultaneous, OrderingMode::NoComm] {
        let c = sampled(&s, &mode, 2);
        let gap = check_log_probs(&s.net, &s.params, &c.buffer, mode.messages(), LOG_PROB_TOLERANCE).unwrap();
        assert!(gap <= LOG_PROB_TOLERANCE, "{mode}: {gap}");
        let again = recompute_log_probs(&s.net, &s.params, &c.buffer, mode.messages()).unwrap();
        assert_eq!(again.len(), c.buffer.len());
    }
}

fn transitions(s: &Setup) -> Vec<WorldTransition> {
    collect(s, &OrderingMode::SeqComm, ActionSource::Uniform, 11, 4).transitions
}

#[test]
fn world_loss_ignores_batch_order() {
    let s = setup(EnvSpec::particle(3), 10);
    let ts = transitions(&s);
    let fwd: Vec<&WorldTransition> = ts.iter().collect();
    let rev: Vec<&WorldTransition> = ts.iter().rev().collect();
    let a = world_model_loss(&s.net, &s.params, &fwd).unwrap();
    let b = world_model_loss(&s.net, &s.params, &rev).unwrap();
    assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    assert!(world_model_loss(&s.net, &s.params, &[]).is_err());
}

#[test]
fn world_updates_touch_only_world_parameters() {
    let s = setup(EnvSpec::particle(3), 12);
    let mut data = WorldModelDataset::new(1000);
    data.extend(transitions(&s));
    let all: Vec<&WorldTransition> = data.iter().collect();
    let before = world_model_loss(&s.net, &s.params, &all).unwrap();
    let mut params = s.params.clone();
    let mut opt = Adam::new(AdamConfig::with_lr(1e-3));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    update_world_model(&s.net, &mut params, &mut opt, &data, 64, 5, 0.0, &mut rng).unwrap();
    assert!(world_model_loss(&s.net, &params, &all).unwrap() < before);
    for id in params.ids() {
        let same = params.get(id) == s.params.get(id);
        assert_eq!(same, !params.name(id).starts_with("world."), "{}", params.name(id));
    }
    let empty = WorldModelDataset::new(8);
    assert!(update_world_model(&s.net, &mut params, &mut opt, &empty, 64, 1, 0.0, &mut rng).is_err());
}
