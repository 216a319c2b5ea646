use super::kernels;
use super::{ParamId, ParamStore, Tensor};
use crate::error::{ensure, invalid, Result};

/// The primitive set every network forward pass is written against.
///
/// Implemented by [`Eval`] for plain inference and by [`super::Tape`] when
/// gradients are needed, so each network has exactly one forward definition.
pub trait Ops {
    type Var: Clone;

    fn value<'s>(&'s self, v: &'s Self::Var) -> &'s Tensor;
    fn param(&mut self, id: ParamId) -> Self::Var;
    fn constant(&mut self, t: Tensor) -> Self::Var;

    /// `[m, k] x [k, n] -> [m, n]`.
    fn matmul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    /// `[B, p, q] x [B, q, r] -> [B, p, r]`, or against `[B, r, q]` when `transpose_b`.
    fn bmm(&mut self, a: &Self::Var, b: &Self::Var, transpose_b: bool) -> Result<Self::Var>;
    /// Elementwise sum; a rank-1 `b` whose length equals `a`'s last axis is added to every row.
    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn sub(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn mul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn minimum(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn scale(&mut self, a: &Self::Var, factor: f64) -> Self::Var;
    fn tanh(&mut self, a: &Self::Var) -> Self::Var;
    fn exp(&mut self, a: &Self::Var) -> Self::Var;
    fn log(&mut self, a: &Self::Var) -> Self::Var;
    fn square(&mut self, a: &Self::Var) -> Self::Var;
    /// Softmax over the last axis.
    fn softmax(&mut self, a: &Self::Var) -> Result<Self::Var>;
    /// Sum of all entries, as a one-element tensor.
    fn sum(&mut self, a: &Self::Var) -> Self::Var;
    fn mean(&mut self, a: &Self::Var) -> Self::Var;
    /// Sum over the last axis: `[.., n] -> [..]`.
    fn sum_last(&mut self, a: &Self::Var) -> Self::Var;
    fn reshape(&mut self, a: &Self::Var, shape: &[usize]) -> Result<Self::Var>;
    /// Row-gather from a rank-2 tensor.
    fn gather_rows(&mut self, a: &Self::Var, rows: &[usize]) -> Result<Self::Var>;
    /// `out[r] = a[r, cols[r]]` for a rank-2 `a`.
    fn pick(&mut self, a: &Self::Var, cols: &[usize]) -> Result<Self::Var>;
}

/// `rows x width` one-hot matrix; `None` entries give an all-zero row.
pub fn one_hot(indices: &[Option<usize>], width: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(&[indices.len(), width]);
    for (r, idx) in indices.iter().enumerate() {
        if let Some(i) = *idx {
            ensure!(i < width, "index {i} out of range for one-hot width {width}");
            t.data_mut()[r * width + i] = 1.0;
        }
    }
    Ok(t)
}

pub(crate) fn f_matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    ensure!(
        a.rank() == 2 && b.rank() == 2 && a.shape()[1] == b.shape()[0],
        "matmul shape mismatch {:?} x {:?}",
        a.shape(),
        b.shape()
    );
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    Tensor::new(vec![m, n], kernels::matmul(a.data(), b.data(), m, k, n))
}

pub(crate) fn bmm_dims(a: &Tensor, b: &Tensor, transpose_b: bool) -> Result<(usize, usize, usize, usize)> {
    ensure!(
        a.rank() == 3 && b.rank() == 3 && a.shape()[0] == b.shape()[0],
        "bmm needs matching rank-3 operands, got {:?} and {:?}",
        a.shape(),
        b.shape()
    );
    let (batch, p, q) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let (bq, r) = if transpose_b {
        (b.shape()[2], b.shape()[1])
    } else {
        (b.shape()[1], b.shape()[2])
    };
    ensure!(q == bq, "bmm inner dims differ: {:?} x {:?}", a.shape(), b.shape());
    Ok((batch, p, q, r))
}

pub(crate) fn f_bmm(a: &Tensor, b: &Tensor, transpose_b: bool) -> Result<Tensor> {
    let (batch, p, q, r) = bmm_dims(a, b, transpose_b)?;
    let mut out = Vec::with_capacity(batch * p * r);
    for i in 0..batch {
        let ab = &a.data()[i * p * q..(i + 1) * p * q];
        let bb = &b.data()[i * q * r..(i + 1) * q * r];
        let block = if transpose_b {
            kernels::matmul_bt(ab, bb, p, q, r)
        } else {
            kernels::matmul(ab, bb, p, q, r)
        };
        out.extend(block);
    }
    Tensor::new(vec![batch, p, r], out)
}

/// Whether `b` is a bias row for `a` rather than a same-shape operand.
pub(crate) fn is_row_broadcast(a: &Tensor, b: &Tensor) -> bool {
    b.rank() == 1 && a.rank() >= 2 && b.len() == a.cols()
}

pub(crate) fn f_add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() == b.shape() {
        return zip(a, b, |x, y| x + y);
    }
    ensure!(
        is_row_broadcast(a, b),
        "add shape mismatch {:?} + {:?}",
        a.shape(),
        b.shape()
    );
    let cols = a.cols();
    let mut out = a.clone();
    for row in out.data_mut().chunks_mut(cols) {
        for (x, y) in row.iter_mut().zip(b.data()) {
            *x += y;
        }
    }
    Ok(out)
}

pub(crate) fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    ensure!(
        a.shape() == b.shape(),
        "elementwise shape mismatch {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub(crate) fn f_softmax(a: &Tensor) -> Result<Tensor> {
    ensure!(a.cols() > 0, "softmax over an empty axis");
    Tensor::new(a.shape().to_vec(), kernels::softmax_rows(a.data(), a.cols()))
}

pub(crate) fn f_sum_last(a: &Tensor) -> Tensor {
    let cols = a.cols().max(1);
    let data: Vec<f64> = a.data().chunks(cols).map(|r| r.iter().sum()).collect();
    let shape = if a.rank() <= 1 {
        vec![1]
    } else {
        a.shape()[..a.rank() - 1].to_vec()
    };
    Tensor { shape, data }
}

pub(crate) fn f_gather_rows(a: &Tensor, rows: &[usize]) -> Result<Tensor> {
    ensure!(a.rank() == 2, "gather_rows needs a matrix, got {:?}", a.shape());
    let (n, c) = (a.shape()[0], a.shape()[1]);
    let mut data = Vec::with_capacity(rows.len() * c);
    for &r in rows {
        ensure!(r < n, "row {r} out of range for {n} rows");
        data.extend_from_slice(a.row(r));
    }
    Tensor::new(vec![rows.len(), c], data)
}

pub(crate) fn f_pick(a: &Tensor, cols: &[usize]) -> Result<Tensor> {
    ensure!(
        a.rank() == 2 && a.shape()[0] == cols.len(),
        "pick needs one column per row, got {:?} for {} indices",
        a.shape(),
        cols.len()
    );
    let width = a.shape()[1];
    let mut data = Vec::with_capacity(cols.len());
    for (r, &c) in cols.iter().enumerate() {
        if c >= width {
            return Err(invalid(format!("column {c} out of range for width {width}")));
        }
        data.push(a.data()[r * width + c]);
    }
    Ok(Tensor::vector(data))
}

/// Eager evaluation with no recording.
#[derive(Clone, Copy)]
pub struct Eval<'a> {
    params: &'a ParamStore,
}

impl<'a> Eval<'a> {
    pub fn new(params: &'a ParamStore) -> Self {
        Self { params }
    }
}

/// Value handle for [`Eval`]: parameters are borrowed, not copied.
#[derive(Clone, Debug)]
pub enum EvalVar {
    Param(ParamId),
    Value(Tensor),
}

impl Eval<'_> {
    fn get<'s>(&'s self, v: &'s EvalVar) -> &'s Tensor {
        match v {
            EvalVar::Param(id) => self.params.get(*id),
            EvalVar::Value(t) => t,
        }
    }
}

impl Ops for Eval<'_> {
    type Var = EvalVar;

    fn value<'s>(&'s self, v: &'s EvalVar) -> &'s Tensor {
        self.get(v)
    }
    fn param(&mut self, id: ParamId) -> EvalVar {
        EvalVar::Param(id)
    }
    fn constant(&mut self, t: Tensor) -> EvalVar {
        EvalVar::Value(t)
    }
    fn matmul(&mut self, a: &EvalVar, b: &EvalVar) -> Result<EvalVar> {
        f_matmul(self.get(a), self.get(b)).map(EvalVar::Value)
    }
    fn bmm(&mut self, a: &EvalVar, b: &EvalVar, transpose_b: bool) -> Result<EvalVar> {
        f_bmm(self.get(a), self.get(b), transpose_b).map(EvalVar::Value)
    }
    fn add(&mut self, a: &EvalVar, b: &EvalVar) -> Result<EvalVar> {
        f_add(self.get(a), self.get(b)).map(EvalVar::Value)
    }
    fn sub(&mut self, a: &EvalVar, b: &EvalVar) -> Result<EvalVar> {
        zip(self.get(a), self.get(b), |x, y| x - y).map(EvalVar::Value)
    }
    fn mul(&mut self, a: &EvalVar, b: &EvalVar) -> Result<EvalVar> {
        zip(self.get(a), self.get(b), |x, y| x * y).map(EvalVar::Value)
    }
    fn minimum(&mut self, a: &EvalVar, b: &EvalVar) -> Result<EvalVar> {
        zip(self.get(a), self.get(b), f64::min).map(EvalVar::Value)
    }
    fn scale(&mut self, a: &EvalVar, factor: f64) -> EvalVar {
        EvalVar::Value(self.get(a).map(|x| x * factor))
    }
    fn tanh(&mut self, a: &EvalVar) -> EvalVar {
        EvalVar::Value(self.get(a).map(f64::tanh))
    }
    fn exp(&mut self, a: &EvalVar) -> EvalVar {
        EvalVar::Value(self.get(a).map(f64::exp))
    }
    fn log(&mut self, a: &EvalVar) -> EvalVar {
        EvalVar::Value(self.get(a).map(f64::ln))
    }
    fn square(&mut self, a: &EvalVar) -> EvalVar {
        EvalVar::Value(self.get(a).map(|x| x * x))
    }
    fn softmax(&mut self, a: &EvalVar) -> Result<EvalVar> {
        f_softmax(self.get(a)).map(EvalVar::Value)
    }
    fn sum(&mut self, a: &EvalVar) -> EvalVar {
        EvalVar::Value(Tensor::scalar(self.get(a).data().iter().sum()))
    }
    fn mean(&mut self, a: &EvalVar) -> EvalVar {
        let t = self.get(a);
        EvalVar::Value(Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64))
    }
    fn sum_last(&mut self, a: &EvalVar) -> EvalVar {
        EvalVar::Value(f_sum_last(self.get(a)))
    }
    fn reshape(&mut self, a: &EvalVar, shape: &[usize]) -> Result<EvalVar> {
        self.get(a).clone().reshaped(shape.to_vec()).map(EvalVar::Value)
    }
    fn gather_rows(&mut self, a: &EvalVar, rows: &[usize]) -> Result<EvalVar> {
        f_gather_rows(self.get(a), rows).map(EvalVar::Value)
    }
    fn pick(&mut self, a: &EvalVar, cols: &[usize]) -> Result<EvalVar> {
        f_pick(self.get(a), cols).map(EvalVar::Value)
    }
}
