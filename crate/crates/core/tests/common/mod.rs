#![allow(dead_code)]
//! Finite-difference gradient checking shared by the test targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqcomm::error::Result;
use seqcomm::nn::{AgentBatch, AttentionModule, Messages, SeqCommNet, HIDDEN_WIDTH};
use seqcomm::tensor::{Eval, Ops, ParamId, ParamStore, Tape, Tensor};

const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const INSTANCES: u64 = 100;
// below this magnitude errors are judged against the floor instead
const SCALE_FLOOR: f64 = 1e-4;

pub trait Objective {
    fn loss<O: Ops>(&self, ops: &mut O) -> Result<O::Var>;
}

fn loss_value(params: &ParamStore, f: &impl Objective) -> f64 {
    let mut ev = Eval::new(params);
    let l = f.loss(&mut ev).unwrap();
    ev.value(&l).item().unwrap()
}

/// Largest relative error over `probes` random coordinates.
pub fn max_error(params: &ParamStore, f: &impl Objective, probes: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut tape = Tape::new(params);
    let l = f.loss(&mut tape).unwrap();
    let grads = tape.backward(l).unwrap();
    // only parameters the loss depends on, so no probe is trivially zero
    let ids: Vec<ParamId> = grads.ids().collect();
    assert!(!ids.is_empty(), "loss reaches no parameter");
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let id = ids[rng.gen_range(0..ids.len())];
        let i = rng.gen_range(0..params.get(id).len());
        let analytic = grads.get(id).expect("listed").data()[i];
        let mut p = params.clone();
        p.get_mut(id).data_mut()[i] += STEP;
        let up = loss_value(&p, f);
        p.get_mut(id).data_mut()[i] -= 2.0 * STEP;
        let down = loss_value(&p, f);
        let numeric = (up - down) / (2.0 * STEP);
        let scale = analytic.abs().max(numeric.abs()).max(SCALE_FLOOR);
        worst = worst.max((analytic - numeric).abs() / scale);
    }
    worst
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Contracts any output against fixed random weights so every entry matters.
fn weigh<O: Ops>(ops: &mut O, v: &O::Var, weights: &Tensor) -> Result<O::Var> {
    let w = ops.constant(weights.clone());
    let p = ops.mul(v, &w)?;
    Ok(ops.sum(&p))
}

struct Primitive {
    op: &'static str,
    a: ParamId,
    b: ParamId,
    weights: Tensor,
    rows: Vec<usize>,
}

impl Objective for Primitive {
    fn loss<O: Ops>(&self, ops: &mut O) -> Result<O::Var> {
        let a = ops.param(self.a);
        let b = ops.param(self.b);
        let out = match self.op {
            "matmul" => ops.matmul(&a, &b)?,
            "bmm" => ops.bmm(&a, &b, false)?,
            "bmm_t" => ops.bmm(&a, &b, true)?,
            "add" => ops.add(&a, &b)?,
            "add_row" => ops.add(&a, &b)?,
            "sub" => ops.sub(&a, &b)?,
            "mul" => ops.mul(&a, &b)?,
            "minimum" => ops.minimum(&a, &b)?,
            "scale" => ops.scale(&a, -1.7),
            "tanh" => ops.tanh(&a),
            "exp" => ops.exp(&a),
            "log" => ops.log(&a),
            "square" => ops.square(&a),
            "softmax" => ops.softmax(&a)?,
            "sum" => {
                let s = ops.sum(&a);
                ops.square(&s)
            }
            "mean" => {
                let s = ops.mean(&a);
                ops.square(&s)
            }
            "sum_last" => ops.sum_last(&a),
            "reshape" => {
                let n = ops.value(&a).len();
                ops.reshape(&a, &[n])?
            }
            "gather_rows" => ops.gather_rows(&a, &self.rows)?,
            "pick" => ops.pick(&a, &self.rows)?,
            other => unreachable!("{other}"),
        };
        weigh(ops, &out, &self.weights)
    }
}

fn primitive(op: &'static str, rng: &mut ChaCha8Rng) -> (ParamStore, Primitive) {
    let (m, k, n) = (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..5));
    let (lo, hi) = if op == "log" { (0.2, 3.0) } else { (-1.5, 1.5) };
    let (sa, sb, so): (Vec<usize>, Vec<usize>, Vec<usize>) = match op {
        "matmul" => (vec![m, k], vec![k, n], vec![m, n]),
        "bmm" => (vec![2, m, k], vec![2, k, n], vec![2, m, n]),
        "bmm_t" => (vec![2, m, k], vec![2, n, k], vec![2, m, n]),
        "add_row" => (vec![m, k], vec![k], vec![m, k]),
        "sum" | "mean" => (vec![m, k], vec![1], vec![1]),
        "sum_last" => (vec![m, k], vec![1], vec![m]),
        "reshape" => (vec![m, k], vec![1], vec![m * k]),
        "gather_rows" => (vec![m, k], vec![1], vec![m + 1, k]),
        "pick" => (vec![m, k], vec![1], vec![m]),
        _ => (vec![m, k], vec![m, k], vec![m, k]),
    };
    let mut store = ParamStore::new();
    let a = store.add("a", random_tensor(&sa, rng, lo, hi));
    let b = store.add("b", random_tensor(&sb, rng, lo, hi));
    let rows = match op {
        "gather_rows" => (0..=m).map(|_| rng.gen_range(0..m)).collect(),
        "pick" => (0..m).map(|_| rng.gen_range(0..k)).collect(),
        _ => Vec::new(),
    };
    let weights = random_tensor(&so, rng, -1.0, 1.0);
    (store, Primitive { op, a, b, weights, rows })
}

pub struct TwoLayer {
    pub w1: ParamId,
    pub w2: ParamId,
    pub x: Tensor,
}

impl Objective for TwoLayer {
    fn loss<O: Ops>(&self, ops: &mut O) -> Result<O::Var> {
        let x = ops.constant(self.x.clone());
        let w1 = ops.param(self.w1);
        let w2 = ops.param(self.w2);
        let h = ops.matmul(&x, &w1)?;
        let h = ops.tanh(&h);
        let y = ops.matmul(&h, &w2)?;
        let y = ops.square(&y);
        Ok(ops.mean(&y))
    }
}

#[derive(Clone, Copy)]
pub enum Head {
    Encoder,
    Policy,
    LogPolicy,
    Critic,
    WorldObs,
    WorldReward,
}

struct NetObjective {
    net: SeqCommNet,
    head: Head,
    obs: Tensor,
    n: usize,
    slots: Vec<Option<usize>>,
    actions: Vec<usize>,
    weights: Tensor,
}

impl Objective for NetObjective {
    fn loss<O: Ops>(&self, ops: &mut O) -> Result<O::Var> {
        let obs = ops.constant(self.obs.clone());
        let hidden = self.net.encoder.forward(ops, &obs)?;
        let mut batch = AgentBatch::default();
        for agent in 0..self.n {
            batch.push(0, self.n, agent, &self.slots, Messages::Full);
        }
        match self.head {
            Head::Encoder => weigh(ops, &hidden, &self.weights),
            Head::Policy | Head::LogPolicy | Head::Critic => {
                let (own, ctx) = self.net.context(ops, &hidden, &batch)?;
                match self.head {
                    Head::Critic => {
                        let v = self.net.value(ops, &own, &ctx)?;
                        weigh(ops, &v, &self.weights)
                    }
                    Head::Policy => {
                        let l = self.net.logits(ops, &own, &ctx)?;
                        weigh(ops, &l, &self.weights)
                    }
                    _ => {
                        let l = self.net.logits(ops, &own, &ctx)?;
                        let p = ops.softmax(&l)?;
                        let lp = ops.log(&p);
                        let picked = ops.pick(&lp, &self.actions)?;
                        Ok(ops.mean(&picked))
                    }
                }
            }
            Head::WorldObs | Head::WorldReward => {
                let (pred, reward) = self.net.world.forward(ops, &hidden, &self.actions, self.n)?;
                match self.head {
                    Head::WorldObs => weigh(ops, &pred, &self.weights),
                    _ => {
                        let r = ops.square(&reward);
                        Ok(ops.sum(&r))
                    }
                }
            }
        }
    }
}

fn head_objective(head: Head, rng: &mut ChaCha8Rng) -> (ParamStore, NetObjective) {
    let n = rng.gen_range(2..5);
    let obs_width = rng.gen_range(2..7);
    let n_actions = rng.gen_range(2..6);
    let mut store = ParamStore::new();
    let net = SeqCommNet::new(&mut store, obs_width, n_actions, rng);
    let obs = random_tensor(&[n, obs_width], rng, -1.0, 1.0);
    let slots = (0..n).map(|_| rng.gen_bool(0.5).then(|| rng.gen_range(0..n_actions))).collect();
    let actions = (0..n).map(|_| rng.gen_range(0..n_actions)).collect();
    let out_shape = match head {
        Head::Encoder => vec![n, HIDDEN_WIDTH],
        Head::Policy => vec![n, n_actions],
        Head::Critic => vec![n, 1],
        Head::WorldObs => vec![n, obs_width],
        _ => vec![1],
    };
    let weights = random_tensor(&out_shape, rng, -1.0, 1.0);
    (
        store,
        NetObjective {
            net,
            head,
            obs,
            n,
            slots,
            actions,
            weights,
        },
    )
}

pub const PRIMITIVES: [&str; 20] = [
    "matmul", "bmm", "bmm_t", "add", "add_row", "sub", "mul", "minimum", "scale", "tanh", "exp", "log", "square",
    "softmax", "sum", "mean", "sum_last", "reshape", "gather_rows", "pick",
];

pub const HEADS: [(&str, Head); 6] = [
    ("encoder", Head::Encoder),
    ("policy logits", Head::Policy),
    ("policy log-prob", Head::LogPolicy),
    ("critic", Head::Critic),
    ("world observation", Head::WorldObs),
    ("world reward", Head::WorldReward),
];

/// Worst relative error of `op` over [`INSTANCES`] random inputs.
pub fn primitive_error(op: &'static str, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..INSTANCES {
        let (store, f) = primitive(op, &mut rng);
        worst = worst.max(max_error(&store, &f, 4, &mut rng));
    }
    worst
}

pub fn mlp_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..INSTANCES {
        let mut store = ParamStore::new();
        let w1 = store.add("w1", random_tensor(&[4, 6], &mut rng, -1.0, 1.0));
        let w2 = store.add("w2", random_tensor(&[6, 2], &mut rng, -1.0, 1.0));
        let f = TwoLayer {
            w1,
            w2,
            x: random_tensor(&[3, 4], &mut rng, -1.0, 1.0),
        };
        worst = worst.max(max_error(&store, &f, 6, &mut rng));
    }
    worst
}

pub fn head_error(head: Head, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..INSTANCES {
        let (store, f) = head_objective(head, &mut rng);
        worst = worst.max(max_error(&store, &f, 6, &mut rng));
    }
    worst
}

struct AttentionObjective {
    module: AttentionModule,
    queries: Tensor,
    entries: Tensor,
    m: usize,
    weights: Tensor,
}

impl Objective for AttentionObjective {
    fn loss<O: Ops>(&self, ops: &mut O) -> Result<O::Var> {
        let q = ops.constant(self.queries.clone());
        let e = ops.constant(self.entries.clone());
        let att = self.module.attend(ops, &[&q], &[&e], None, self.m)?;
        let s = weigh(ops, &att.context, &self.weights)?;
        let w = ops.square(&att.weights);
        let w = ops.sum(&w);
        ops.add(&s, &w)
    }
}

pub fn attention_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..INSTANCES {
        let (b, m, wq, we) = (rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(2..6), rng.gen_range(2..6));
        let mut store = ParamStore::new();
        let module = AttentionModule::new(&mut store, "att", &[wq], &[we], 8, 8, &mut rng);
        let f = AttentionObjective {
            module,
            queries: random_tensor(&[b, wq], &mut rng, -1.0, 1.0),
            entries: random_tensor(&[b * m, we], &mut rng, -1.0, 1.0),
            m,
            weights: random_tensor(&[b, 8], &mut rng, -1.0, 1.0),
        };
        worst = worst.max(max_error(&store, &f, 6, &mut rng));
    }
    worst
}
