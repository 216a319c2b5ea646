use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Gradients, ParamId, ParamStore, Tensor};
use crate::error::{ensure, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
struct Moments {
    first: Tensor,
    second: Tensor,
}

/// Adam with bias correction. Moments are created lazily per parameter.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    moments: BTreeMap<ParamId, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter that has a gradient.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        for id in grads.ids() {
            let g = grads.get(id).expect("listed ids carry gradients");
            ensure!(
                g.shape() == params.get(id).shape(),
                "gradient shape {:?} does not match parameter `{}` {:?}",
                g.shape(),
                params.name(id),
                params.get(id).shape()
            );
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for id in grads.ids() {
            let g = grads.get(id).expect("listed ids carry gradients");
            let m = self.moments.entry(id).or_insert_with(|| Moments {
                first: Tensor::zeros(g.shape()),
                second: Tensor::zeros(g.shape()),
            });
            let p = params.get_mut(id).data_mut();
            let (mf, ms) = (m.first.data_mut(), m.second.data_mut());
            for i in 0..p.len() {
                let gi = g.data()[i];
                mf[i] = beta1 * mf[i] + (1.0 - beta1) * gi;
                ms[i] = beta2 * ms[i] + (1.0 - beta2) * gi * gi;
                let m_hat = mf[i] / c1;
                let v_hat = ms[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
