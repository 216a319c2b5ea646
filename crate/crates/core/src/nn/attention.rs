use rand::Rng;

use super::Linear;
use crate::error::{ensure, Result};
use crate::tensor::{Eval, Ops, ParamStore, Tensor};

/// Scaled dot-product attention with one linear layer each for query, key
/// and value.
///
/// For a query `q` and entries `x_1..x_m` the weights are
/// `softmax(q . k_j / sqrt(d_k))` and the context is `sum_j alpha_j v_j`.
#[derive(Clone, Debug)]
pub struct AttentionModule {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    key_width: usize,
}

/// Output of one batched attention call.
pub struct Attention<V> {
    /// `[B, value_width]`.
    pub context: V,
    /// `[B, m]`; each row sums to one.
    pub weights: V,
}

impl AttentionModule {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        query_widths: &[usize],
        entry_widths: &[usize],
        key_width: usize,
        value_width: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            query: Linear::new(store, &format!("{name}.query"), query_widths, key_width, rng),
            key: Linear::new(store, &format!("{name}.key"), entry_widths, key_width, rng),
            value: Linear::new(store, &format!("{name}.value"), entry_widths, value_width, rng),
            key_width,
        }
    }

    pub fn key_width(&self) -> usize {
        self.key_width
    }

    pub fn value_width(&self) -> usize {
        self.value.out_width()
    }

    /// Batched attention of `B` queries over `m` entries each.
    ///
    /// `entries` holds the entry blocks row-wise. Without `index`, query `b`
    /// attends to entry rows `b*m .. (b+1)*m`. With `index`, keys and values
    /// are projected once per entry row and `index` (length `B*m`) picks
    /// the rows each query sees.
    pub fn attend<O: Ops>(
        &self,
        ops: &mut O,
        queries: &[&O::Var],
        entries: &[&O::Var],
        index: Option<&[usize]>,
        m: usize,
    ) -> Result<Attention<O::Var>> {
        ensure!(m > 0, "attention needs at least one entry");
        let b = ops.value(queries[0]).rows();
        let q = self.query.forward(ops, queries)?;
        let mut k = self.key.forward(ops, entries)?;
        let mut v = self.value.forward(ops, entries)?;
        if let Some(index) = index {
            k = ops.gather_rows(&k, index)?;
            v = ops.gather_rows(&v, index)?;
        }
        ensure!(
            ops.value(&k).rows() == b * m,
            "{} entry rows for {} queries x {} entries",
            ops.value(&k).rows(),
            b,
            m
        );
        let dk = self.key_width;
        let dv = self.value_width();
        let q = ops.reshape(&q, &[b, 1, dk])?;
        let k = ops.reshape(&k, &[b, m, dk])?;
        let v = ops.reshape(&v, &[b, m, dv])?;
        let scores = ops.bmm(&q, &k, true)?;
        let scores = ops.scale(&scores, 1.0 / (dk as f64).sqrt());
        let alpha = ops.softmax(&scores)?;
        let context = ops.bmm(&alpha, &v, false)?;
        Ok(Attention {
            context: ops.reshape(&context, &[b, dv])?,
            weights: ops.reshape(&alpha, &[b, m])?,
        })
    }

    /// Single query over a list of entries, each given as the concatenation
    /// of its input blocks. Returns `(context, weights)`.
    pub fn attend_one(&self, params: &ParamStore, query: &[f64], entries: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
        ensure!(!entries.is_empty(), "attention needs at least one entry");
        let mut ev = Eval::new(params);
        let queries = split_blocks(&mut ev, &[query.to_vec()], self.query.in_widths())?;
        let blocks = split_blocks(&mut ev, entries, self.key.in_widths())?;
        let q_refs: Vec<_> = queries.iter().collect();
        let e_refs: Vec<_> = blocks.iter().collect();
        let att = self.attend(&mut ev, &q_refs, &e_refs, None, entries.len())?;
        Ok((ev.value(&att.context).data().to_vec(), ev.value(&att.weights).data().to_vec()))
    }
}

fn split_blocks<O: Ops>(ops: &mut O, rows: &[Vec<f64>], widths: &[usize]) -> Result<Vec<O::Var>> {
    let total: usize = widths.iter().sum();
    ensure!(
        rows.iter().all(|r| r.len() == total),
        "attention inputs must have width {total}"
    );
    let mut out = Vec::with_capacity(widths.len());
    let mut start = 0;
    for &w in widths {
        let data = rows.iter().flat_map(|r| r[start..start + w].iter().copied()).collect();
        out.push(ops.constant(Tensor::matrix(rows.len(), w, data)?));
        start += w;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn module(widths: usize, dk: usize, dv: usize) -> (AttentionModule, ParamStore) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let am = AttentionModule::new(&mut store, "am", &[widths], &[widths], dk, dv, &mut rng);
        (am, store)
    }

    #[test]
    fn identical_entries_get_uniform_weights() {
        let (am, store) = module(4, 8, 3);
        let e = vec![0.3, -0.1, 0.7, 0.2];
        let (ctx, w) = am.attend_one(&store, &[1.0, 2.0, 3.0, 4.0], &vec![e.clone(); 3]).unwrap();
        for x in &w {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
        let (single_ctx, single_w) = am.attend_one(&store, &[1.0, 2.0, 3.0, 4.0], &[e]).unwrap();
        assert_eq!(single_w, vec![1.0]);
        for (a, b) in ctx.iter().zip(&single_ctx) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_entries_are_rejected() {
        let (am, store) = module(2, 4, 2);
        assert!(am.attend_one(&store, &[0.0, 0.0], &[]).is_err());
    }

    #[test]
    fn hand_set_projections_give_two_thirds() {
        // Identity-like projections: q = x, k = x, with d_k = 2.
        // Entry keys chosen so that q . k_1 = ln2 * sqrt(2) and q . k_2 = 0.
        let (am, mut store) = module(2, 2, 2);
        let eye = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        for layer in [&am.query, &am.key, &am.value] {
            store.set(layer.weight(0), eye.clone()).unwrap();
            store.set(layer.bias(), Tensor::zeros(&[2])).unwrap();
        }
        let scale = 2f64.ln() * 2f64.sqrt();
        let (ctx, w) = am
            .attend_one(&store, &[1.0, 0.0], &[vec![scale, 1.0], vec![0.0, 1.0]])
            .unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((w[1] - 1.0 / 3.0).abs() < 1e-12);
        // context is the convex combination of the value vectors
        assert!((ctx[0] - 2.0 / 3.0 * scale).abs() < 1e-12);
        assert!((ctx[1] - 1.0).abs() < 1e-12);
    }
}
