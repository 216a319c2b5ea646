use rand::Rng;

use crate::error::{ensure, Result};
use crate::tensor::{Ops, ParamId, ParamStore};

/// Fully connected layer over one or more input blocks.
///
/// `y = x_1 W_1 + ... + x_k W_k + b`, which equals one weight matrix applied
/// to the concatenation `[x_1 ; ... ; x_k]` without materializing it.
#[derive(Clone, Debug)]
pub struct Linear {
    weights: Vec<ParamId>,
    bias: ParamId,
    in_widths: Vec<usize>,
    out_width: usize,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, in_widths: &[usize], out_width: usize, rng: &mut R) -> Self {
        let fan_in: usize = in_widths.iter().sum();
        let weights = in_widths
            .iter()
            .enumerate()
            .map(|(i, &w)| store.add_uniform(format!("{name}.w{i}"), &[w, out_width], fan_in, rng))
            .collect();
        let bias = store.add_uniform(format!("{name}.b"), &[out_width], fan_in, rng);
        Self {
            weights,
            bias,
            in_widths: in_widths.to_vec(),
            out_width,
        }
    }

    pub fn in_widths(&self) -> &[usize] {
        &self.in_widths
    }

    pub fn out_width(&self) -> usize {
        self.out_width
    }

    pub fn weight(&self, block: usize) -> ParamId {
        self.weights[block]
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }

    pub fn forward<O: Ops>(&self, ops: &mut O, inputs: &[&O::Var]) -> Result<O::Var> {
        ensure!(
            inputs.len() == self.weights.len(),
            "layer expects {} input blocks, got {}",
            self.weights.len(),
            inputs.len()
        );
        let mut acc: Option<O::Var> = None;
        for (x, &w) in inputs.iter().zip(&self.weights) {
            let w = ops.param(w);
            let y = ops.matmul(x, &w)?;
            acc = Some(match acc {
                None => y,
                Some(a) => ops.add(&a, &y)?,
            });
        }
        let b = ops.param(self.bias);
        ops.add(&acc.expect("at least one input block"), &b)
    }
}
