use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqcomm::error::Result;
use seqcomm::nn::{Messages, SeqCommNet};
use seqcomm::protocol::{
    count_messages, determine_priority, determine_priority_with, intention_value_messages, launching_step,
    rollout_intention, trajectory_value, ActionChoice, IntentionEvaluator, NegotiationConfig, OrderSequence, Phase,
    Planner, RolloutJob,
};
use seqcomm::tensor::{ParamStore, Tensor};

fn brute_force(rewards: &[f64], gamma: f64) -> f64 {
    let mut total = 0.0;
    for (j, r) in rewards.iter().enumerate() {
        total += gamma.powi(j as i32) * r;
    }
    total / rewards.len() as f64
}

fn net(obs_width: usize, n_actions: usize, seed: u64) -> (SeqCommNet, ParamStore) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = SeqCommNet::new(&mut store, obs_width, n_actions, &mut rng);
    (net, store)
}

fn scene(net: &SeqCommNet, store: &ParamStore, n: usize, seed: u64) -> Tensor {
    let w = net.obs_width();
    let obs = Tensor::matrix(n, w, (0..n * w).map(|i| ((i as f64 + seed as f64) * 0.618).sin()).collect()).unwrap();
    net.encoder.encode_rows(store, &obs).unwrap()
}

fn config(horizon: usize, samples: usize) -> NegotiationConfig {
    NegotiationConfig {
        horizon,
        samples,
        gamma: 0.95,
        rollout_actions: ActionChoice::Greedy,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn trajectory_value_matches_brute_force(
        rewards in prop::collection::vec(-10.0f64..10.0, 1..=20),
        gamma in 0.01f64..=1.0,
    ) {
        let v = trajectory_value(&rewards, gamma, rewards.len()).unwrap();
        prop_assert!((v - brute_force(&rewards, gamma)).abs() <= 1e-9);
    }
}

struct Stub {
    values: Vec<f64>,
    shift: f64,
}

impl IntentionEvaluator for Stub {
    fn n_agents(&self) -> usize {
        self.values.len()
    }
    fn intention_values(&mut self, candidates: &[usize], fixed: &[(usize, usize)]) -> Result<Vec<f64>> {
        // level-dependent but deterministic, so every level has a real choice
        Ok(candidates
            .iter()
            .map(|&c| self.values[c] * (1.0 + fixed.len() as f64) + self.shift)
            .collect())
    }
    fn committed_action(&mut self, agent: usize, _fixed: &[(usize, usize)]) -> Result<usize> {
        Ok(agent % 3)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn argmax_is_shift_invariant(
        values in prop::collection::vec(-5.0f64..5.0, 1..=8),
        shift in -100.0f64..100.0,
    ) {
        let base = determine_priority_with(&mut Stub { values: values.clone(), shift: 0.0 }).unwrap();
        let moved = determine_priority_with(&mut Stub { values, shift }).unwrap();
        prop_assert_eq!(base.order, moved.order);
    }

    #[test]
    fn random_orders_are_permutations(n in 1usize..=12, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let o = OrderSequence::random(n, &mut rng);
        let mut sorted = o.agents().to_vec();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        prop_assert!(OrderSequence::new(o.agents().to_vec()).is_ok());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn priority_is_a_permutation(n in 1usize..=8, seed in any::<u64>()) {
        let (m, s) = net(4, 3, seed);
        let h = scene(&m, &s, n, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let out = determine_priority(&h, &m, &s, &config(2, 2), &mut rng).unwrap();
        let mut sorted = out.order.agents().to_vec();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(out.levels.len(), n - 1);
        prop_assert_eq!(out.comm.intention_value_messages, intention_value_messages(n));
        prop_assert_eq!(out.comm.hidden_state_broadcasts, n as u64);
    }
}

#[test]
fn stubbed_values_pick_agent_one() {
    let out = determine_priority_with(&mut Stub {
        values: vec![0.2, 0.9, 0.5],
        shift: 0.0,
    })
    .unwrap();
    assert_eq!(out.order.agents()[0], 1);
    assert_eq!(out.order.agents(), &[1, 2, 0]);
}

#[test]
fn singleton_order_for_one_agent() {
    let (m, s) = net(4, 3, 1);
    let h = scene(&m, &s, 1, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let out = determine_priority(&h, &m, &s, &config(3, 2), &mut rng).unwrap();
    assert_eq!(out.order.agents(), &[0]);
    assert!(out.levels.is_empty());
}

#[test]
fn single_sample_value_is_its_trajectory() {
    let (m, s) = net(6, 5, 3);
    let h = scene(&m, &s, 3, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let v = rollout_intention(1, &[], &h, &m, &s, &config(4, 1), &mut rng).unwrap();
    assert_eq!(v.trajectory_values.len(), 1);
    assert_eq!(v.value, v.trajectory_values[0]);
}

#[test]
fn two_samples_average_separately_recomputed_rollouts() {
    let (m, s) = net(6, 5, 5);
    let h = scene(&m, &s, 4, 5);
    let cfg = config(5, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let v = rollout_intention(2, &[(0, 3)], &h, &m, &s, &cfg, &mut rng).unwrap();
    assert_eq!(v.lower_orders.len(), 2);
    assert_ne!(v.lower_orders[0], v.lower_orders[1]);
    let planner = Planner::new(&m, &s, &cfg);
    let mut each = Vec::new();
    for lower in &v.lower_orders {
        let mut order = vec![0, 2];
        order.extend(lower);
        let job = RolloutJob {
            scene: 0,
            order,
            fixed: vec![(0, 3)],
        };
        let mut r = ChaCha8Rng::seed_from_u64(99);
        let t = planner.rollouts(std::slice::from_ref(&h), &[job], std::slice::from_mut(&mut r)).unwrap();
        assert_eq!(t[0].actions[0][0], 3, "pinned upper action is kept");
        each.push(trajectory_value(&t[0].rewards, cfg.gamma, cfg.horizon).unwrap());
    }
    assert_eq!(each, v.trajectory_values);
    assert!((v.value - (each[0] + each[1]) / 2.0).abs() < 1e-15);
}

#[test]
fn hyperparameter_table_defaults() {
    use seqcomm::envs::EnvSpec;
    use seqcomm::trainer::{OrderingMode, TrainConfig};
    let c = TrainConfig::defaults_for(EnvSpec::particle(3), OrderingMode::SeqComm, 0);
    assert_eq!((c.negotiation.horizon, c.negotiation.samples), (10, 2));
    assert_eq!(c.negotiation.gamma, 0.95);
}

#[test]
fn priority_and_launch_replay_exactly() {
    let (m, s) = net(6, 5, 8);
    let h = scene(&m, &s, 4, 8);
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let p = determine_priority(&h, &m, &s, &config(3, 2), &mut rng).unwrap();
        let l = launching_step(&p.order, &h, &m, &s, Messages::Full, ActionChoice::Sample, &mut rng).unwrap();
        (p, l)
    };
    assert_eq!(run(), run());
}

#[test]
fn launching_conditioning_and_counts() {
    let (m, s) = net(6, 5, 9);
    let h1 = scene(&m, &s, 1, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let one = launching_step(&OrderSequence::identity(1), &h1, &m, &s, Messages::Full, ActionChoice::Greedy, &mut rng).unwrap();
    assert_eq!(one.uppers[0], vec![None]);
    let direct = m.policy_forward(&s, h1.row(0), &[], &[]).unwrap();
    assert_eq!(one.actions[0], direct.mode());
    assert_eq!(one.comm.action_messages, 0);

    let h4 = scene(&m, &s, 4, 10);
    let order = OrderSequence::new(vec![3, 1, 0, 2]).unwrap();
    let four = launching_step(&order, &h4, &m, &s, Messages::Full, ActionChoice::Sample, &mut rng).unwrap();
    assert_eq!(four.comm.action_messages, 6);
    // level 3 is agent 0: it sees exactly agents 3 and 1
    let seen: Vec<usize> = (0..4).filter(|&j| four.uppers[0][j].is_some()).collect();
    assert_eq!(seen, vec![1, 3]);
    assert_eq!(four.uppers[0][3], Some(four.actions[3]));
}

#[test]
fn message_accounting_for_two_to_eight_agents() {
    for n in 2..=8usize {
        let launch = count_messages(n, Phase::Launching);
        assert_eq!(launch.action_messages, (n * (n - 1) / 2) as u64);
        let neg = count_messages(n, Phase::Negotiation);
        assert_eq!(neg.hidden_state_broadcasts, n as u64);
        let closed: u64 = (1..n).map(|k| (n - k + 1) as u64).sum();
        assert_eq!(neg.intention_value_messages, closed);
    }
    assert_eq!(count_messages(4, Phase::Negotiation).intention_value_messages, 9);
}
