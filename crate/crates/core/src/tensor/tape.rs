use super::kernels;
use super::ops::{self, Ops};
use super::{Gradients, ParamId, ParamStore, Tensor};
use crate::error::{ensure, Result};

/// Index of a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Matmul(Var, Var),
    Bmm(Var, Var, bool),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Minimum(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Softmax(Var),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    Reshape(Var),
    GatherRows(Var, Vec<usize>),
    Pick(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    // `None` for parameter leaves, which read through to the store.
    value: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records primitive ops in evaluation order for one reverse sweep.
///
/// Nodes are appended as ops execute, so every parent precedes its children
/// and the backward pass is a single reverse scan.
pub struct Tape<'a> {
    params: &'a ParamStore,
    nodes: Vec<Node>,
}

impl<'a> Tape<'a> {
    pub fn new(params: &'a ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::Param(_) => true,
            other => parents(other).iter().any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            (None, _) => unreachable!("only parameter leaves omit their value"),
        }
    }

    /// Reverse sweep from a scalar `loss`, returning parameter gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        ensure!(
            self.val(loss).len() == 1,
            "backward needs a scalar loss, got shape {:?}",
            self.val(loss).shape()
        );
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::new(self.val(loss).shape().to_vec(), vec![1.0])?);
        let mut out = Gradients::empty(self.params.len());

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.accumulate(*id, &g),
                op => self.propagate(op, Var(i), &g, &mut grads)?,
            }
        }
        Ok(out)
    }

    fn propagate(&self, op: &Op, out: Var, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let needs = |v: &Var| self.nodes[v.0].requires_grad;
        match op {
            Op::Leaf | Op::Param(_) => {}
            Op::Matmul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if needs(a) {
                    let ga = kernels::matmul_bt(g.data(), bv.data(), m, n, k);
                    acc(grads, *a, av.shape(), ga);
                }
                if needs(b) {
                    let mut gb = vec![0.0; k * n];
                    kernels::matmul_at_acc(&mut gb, av.data(), g.data(), m, k, n);
                    acc(grads, *b, bv.shape(), gb);
                }
            }
            Op::Bmm(a, b, transpose_b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let (batch, p, q, r) = ops::bmm_dims(av, bv, *transpose_b)?;
                let mut ga = vec![0.0; av.len()];
                let mut gb = vec![0.0; bv.len()];
                for i in 0..batch {
                    let ab = &av.data()[i * p * q..(i + 1) * p * q];
                    let bb = &bv.data()[i * q * r..(i + 1) * q * r];
                    let gb_out = &g.data()[i * p * r..(i + 1) * p * r];
                    if *transpose_b {
                        // out = a b^T with b: [r, q]
                        let da = kernels::matmul(gb_out, bb, p, r, q);
                        ga[i * p * q..(i + 1) * p * q].copy_from_slice(&da);
                        kernels::matmul_at_acc(&mut gb[i * q * r..(i + 1) * q * r], gb_out, ab, p, r, q);
                    } else {
                        let da = kernels::matmul_bt(gb_out, bb, p, r, q);
                        ga[i * p * q..(i + 1) * p * q].copy_from_slice(&da);
                        kernels::matmul_at_acc(&mut gb[i * q * r..(i + 1) * q * r], ab, gb_out, p, q, r);
                    }
                }
                if needs(a) {
                    acc(grads, *a, av.shape(), ga);
                }
                if needs(b) {
                    acc(grads, *b, bv.shape(), gb);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if needs(v) {
                        acc(grads, *v, g.shape(), g.data().to_vec());
                    }
                }
            }
            Op::AddRow(a, b) => {
                if needs(a) {
                    acc(grads, *a, g.shape(), g.data().to_vec());
                }
                if needs(b) {
                    let cols = g.cols();
                    let mut gb = vec![0.0; cols];
                    for row in g.data().chunks(cols) {
                        for (x, y) in gb.iter_mut().zip(row) {
                            *x += y;
                        }
                    }
                    acc(grads, *b, &[cols], gb);
                }
            }
            Op::Sub(a, b) => {
                if needs(a) {
                    acc(grads, *a, g.shape(), g.data().to_vec());
                }
                if needs(b) {
                    acc(grads, *b, g.shape(), g.data().iter().map(|x| -x).collect());
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                if needs(a) {
                    let d = g.data().iter().zip(bv.data()).map(|(g, y)| g * y).collect();
                    acc(grads, *a, av.shape(), d);
                }
                if needs(b) {
                    let d = g.data().iter().zip(av.data()).map(|(g, x)| g * x).collect();
                    acc(grads, *b, bv.shape(), d);
                }
            }
            Op::Minimum(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let take_a: Vec<bool> = av.data().iter().zip(bv.data()).map(|(x, y)| x <= y).collect();
                if needs(a) {
                    let d = g.data().iter().zip(&take_a).map(|(&g, &t)| if t { g } else { 0.0 }).collect();
                    acc(grads, *a, av.shape(), d);
                }
                if needs(b) {
                    let d = g.data().iter().zip(&take_a).map(|(&g, &t)| if t { 0.0 } else { g }).collect();
                    acc(grads, *b, bv.shape(), d);
                }
            }
            Op::Scale(a, f) => {
                acc(grads, *a, g.shape(), g.data().iter().map(|x| x * f).collect());
            }
            Op::Tanh(a) => {
                let y = self.val(out);
                let d = g.data().iter().zip(y.data()).map(|(g, y)| g * (1.0 - y * y)).collect();
                acc(grads, *a, g.shape(), d);
            }
            Op::Exp(a) => {
                let y = self.val(out);
                let d = g.data().iter().zip(y.data()).map(|(g, y)| g * y).collect();
                acc(grads, *a, g.shape(), d);
            }
            Op::Log(a) => {
                let x = self.val(*a);
                let d = g.data().iter().zip(x.data()).map(|(g, x)| g / x).collect();
                acc(grads, *a, g.shape(), d);
            }
            Op::Square(a) => {
                let x = self.val(*a);
                let d = g.data().iter().zip(x.data()).map(|(g, x)| 2.0 * g * x).collect();
                acc(grads, *a, g.shape(), d);
            }
            Op::Softmax(a) => {
                let y = self.val(out);
                let cols = y.cols();
                let mut d = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks(cols).zip(g.data().chunks(cols)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    d.extend(yr.iter().zip(gr).map(|(y, g)| y * (g - dot)));
                }
                acc(grads, *a, y.shape(), d);
            }
            Op::Sum(a) => {
                let shape = self.val(*a).shape().to_vec();
                let n = self.val(*a).len();
                acc(grads, *a, &shape, vec![g.data()[0]; n]);
            }
            Op::Mean(a) => {
                let shape = self.val(*a).shape().to_vec();
                let n = self.val(*a).len();
                acc(grads, *a, &shape, vec![g.data()[0] / n as f64; n]);
            }
            Op::SumLast(a) => {
                let av = self.val(*a);
                let cols = av.cols().max(1);
                let mut d = Vec::with_capacity(av.len());
                for &gv in g.data() {
                    d.extend(std::iter::repeat_n(gv, cols));
                }
                acc(grads, *a, av.shape(), d);
            }
            Op::Reshape(a) => {
                let shape = self.val(*a).shape().to_vec();
                acc(grads, *a, &shape, g.data().to_vec());
            }
            Op::GatherRows(a, rows) => {
                let av = self.val(*a);
                let cols = av.cols();
                let mut d = vec![0.0; av.len()];
                for (gr, &r) in g.data().chunks(cols).zip(rows) {
                    for (x, y) in d[r * cols..(r + 1) * cols].iter_mut().zip(gr) {
                        *x += y;
                    }
                }
                acc(grads, *a, av.shape(), d);
            }
            Op::Pick(a, cols) => {
                let av = self.val(*a);
                let width = av.cols();
                let mut d = vec![0.0; av.len()];
                for (r, (&c, &gv)) in cols.iter().zip(g.data()).enumerate() {
                    d[r * width + c] += gv;
                }
                acc(grads, *a, av.shape(), d);
            }
        }
        Ok(())
    }
}

fn parents(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf | Op::Param(_) => vec![],
        Op::Matmul(a, b)
        | Op::Bmm(a, b, _)
        | Op::Add(a, b)
        | Op::AddRow(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::Minimum(a, b) => vec![*a, *b],
        Op::Scale(a, _)
        | Op::Tanh(a)
        | Op::Exp(a)
        | Op::Log(a)
        | Op::Square(a)
        | Op::Softmax(a)
        | Op::Sum(a)
        | Op::Mean(a)
        | Op::SumLast(a)
        | Op::Reshape(a)
        | Op::GatherRows(a, _)
        | Op::Pick(a, _) => vec![*a],
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], data: Vec<f64>) {
    match &mut grads[v.0] {
        Some(t) => {
            for (x, y) in t.data_mut().iter_mut().zip(&data) {
                *x += y;
            }
        }
        slot @ None => {
            *slot = Some(Tensor {
                shape: shape.to_vec(),
                data,
            })
        }
    }
}

impl Ops for Tape<'_> {
    type Var = Var;

    fn value<'s>(&'s self, v: &'s Var) -> &'s Tensor {
        self.val(*v)
    }
    fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }
    fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }
    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let v = ops::f_matmul(self.val(*a), self.val(*b))?;
        Ok(self.push(v, Op::Matmul(*a, *b)))
    }
    fn bmm(&mut self, a: &Var, b: &Var, transpose_b: bool) -> Result<Var> {
        let v = ops::f_bmm(self.val(*a), self.val(*b), transpose_b)?;
        Ok(self.push(v, Op::Bmm(*a, *b, transpose_b)))
    }
    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let broadcast = self.val(*a).shape() != self.val(*b).shape()
            && ops::is_row_broadcast(self.val(*a), self.val(*b));
        let v = ops::f_add(self.val(*a), self.val(*b))?;
        let op = if broadcast { Op::AddRow(*a, *b) } else { Op::Add(*a, *b) };
        Ok(self.push(v, op))
    }
    fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let v = ops::zip(self.val(*a), self.val(*b), |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(*a, *b)))
    }
    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let v = ops::zip(self.val(*a), self.val(*b), |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(*a, *b)))
    }
    fn minimum(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let v = ops::zip(self.val(*a), self.val(*b), f64::min)?;
        Ok(self.push(v, Op::Minimum(*a, *b)))
    }
    fn scale(&mut self, a: &Var, factor: f64) -> Var {
        let v = self.val(*a).map(|x| x * factor);
        self.push(v, Op::Scale(*a, factor))
    }
    fn tanh(&mut self, a: &Var) -> Var {
        let v = self.val(*a).map(f64::tanh);
        self.push(v, Op::Tanh(*a))
    }
    fn exp(&mut self, a: &Var) -> Var {
        let v = self.val(*a).map(f64::exp);
        self.push(v, Op::Exp(*a))
    }
    fn log(&mut self, a: &Var) -> Var {
        let v = self.val(*a).map(f64::ln);
        self.push(v, Op::Log(*a))
    }
    fn square(&mut self, a: &Var) -> Var {
        let v = self.val(*a).map(|x| x * x);
        self.push(v, Op::Square(*a))
    }
    fn softmax(&mut self, a: &Var) -> Result<Var> {
        let v = ops::f_softmax(self.val(*a))?;
        Ok(self.push(v, Op::Softmax(*a)))
    }
    fn sum(&mut self, a: &Var) -> Var {
        let v = Tensor::scalar(self.val(*a).data().iter().sum());
        self.push(v, Op::Sum(*a))
    }
    fn mean(&mut self, a: &Var) -> Var {
        let t = self.val(*a);
        let v = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        self.push(v, Op::Mean(*a))
    }
    fn sum_last(&mut self, a: &Var) -> Var {
        let v = ops::f_sum_last(self.val(*a));
        self.push(v, Op::SumLast(*a))
    }
    fn reshape(&mut self, a: &Var, shape: &[usize]) -> Result<Var> {
        let v = self.val(*a).clone().reshaped(shape.to_vec())?;
        Ok(self.push(v, Op::Reshape(*a)))
    }
    fn gather_rows(&mut self, a: &Var, rows: &[usize]) -> Result<Var> {
        let v = ops::f_gather_rows(self.val(*a), rows)?;
        Ok(self.push(v, Op::GatherRows(*a, rows.to_vec())))
    }
    fn pick(&mut self, a: &Var, cols: &[usize]) -> Result<Var> {
        let v = ops::f_pick(self.val(*a), cols)?;
        Ok(self.push(v, Op::Pick(*a, cols.to_vec())))
    }
}
