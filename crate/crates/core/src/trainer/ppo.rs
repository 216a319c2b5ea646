use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// On-policy optimization settings. One batch is one full episode from
/// each of `envs` parallel environments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub envs: usize,
    pub policy_lr: f64,
    pub value_lr: f64,
    pub world_lr: f64,
    pub entropy_coef: f64,
    /// Global gradient-norm clip per update; `0` disables clipping.
    pub max_grad_norm: f64,
    pub total_env_steps: u64,
    /// Random-policy batches used to fit the world model before training.
    pub world_warmup_batches: usize,
    /// World-model passes over its dataset per policy update.
    pub world_epochs: usize,
    /// Most recent real transitions kept for world-model regression.
    pub world_capacity: usize,
    pub world_minibatch: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            epochs: 4,
            minibatches: 1,
            envs: 16,
            policy_lr: 5e-4,
            value_lr: 1e-3,
            world_lr: 1e-3,
            entropy_coef: 0.01,
            max_grad_norm: 0.5,
            total_env_steps: 100_000,
            world_warmup_batches: 5,
            world_epochs: 1,
            world_capacity: 4096,
            world_minibatch: 256,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.gamma > 0.0 && self.gamma <= 1.0, "gamma must lie in (0, 1], got {}", self.gamma);
        ensure!(
            (0.0..=1.0).contains(&self.gae_lambda),
            "gae_lambda must lie in [0, 1], got {}",
            self.gae_lambda
        );
        ensure!(self.clip_epsilon > 0.0, "clip_epsilon must be positive");
        ensure!(self.epochs >= 1 && self.minibatches >= 1 && self.envs >= 1, "epochs, minibatches and envs must be positive");
        for (name, lr) in [("policy_lr", self.policy_lr), ("value_lr", self.value_lr), ("world_lr", self.world_lr)] {
            ensure!(lr > 0.0 && lr.is_finite(), "{name} must be positive, got {lr}");
        }
        ensure!(self.entropy_coef >= 0.0 && self.max_grad_norm >= 0.0, "entropy_coef and max_grad_norm must be nonnegative");
        ensure!(self.world_capacity >= 1 && self.world_minibatch >= 1, "world_capacity and world_minibatch must be positive");
        Ok(())
    }
}

/// Generalized advantage estimates and returns for one trajectory.
///
/// `values[t]` estimates the state before `rewards[t]`; `bootstrap` is the
/// value after the last reward (zero for a finished episode).
///
/// ```
/// let (adv, ret) = seqcomm::trainer::compute_gae(&[1.0], &[1.0], 2.0, 0.95, 0.9).unwrap();
/// assert!((adv[0] - 1.9).abs() < 1e-12);
/// assert!((ret[0] - 2.9).abs() < 1e-12);
/// ```
pub fn compute_gae(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    ensure!(
        rewards.len() == values.len(),
        "{} rewards but {} values",
        rewards.len(),
        values.len()
    );
    let t = rewards.len();
    let mut adv = vec![0.0; t];
    let mut next_value = bootstrap;
    let mut running = 0.0;
    for i in (0..t).rev() {
        let delta = rewards[i] + gamma * next_value - values[i];
        running = delta + gamma * lambda * running;
        adv[i] = running;
        next_value = values[i];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// `min(ratio * A, g)` with `g = (1 + eps) A` for `A >= 0`, else `(1 - eps) A`.
pub fn ppo_clip_objective(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    (ratio * advantage).min(clip_target(advantage, epsilon))
}

pub(crate) fn clip_target(advantage: f64, epsilon: f64) -> f64 {
    if advantage >= 0.0 {
        (1.0 + epsilon) * advantage
    } else {
        (1.0 - epsilon) * advantage
    }
}

/// Zero mean, unit variance. Constant inputs only get centered.
pub fn normalize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for x in xs.iter_mut() {
        *x -= mean;
        if std > 1e-8 {
            *x /= std;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_zero_gives_td_residuals() {
        let r = [1.0, -0.5, 2.0];
        let v = [0.3, 0.7, -0.2];
        let (adv, _) = compute_gae(&r, &v, 0.4, 0.9, 0.0).unwrap();
        let next = [0.7, -0.2, 0.4];
        for i in 0..3 {
            assert!((adv[i] - (r[i] + 0.9 * next[i] - v[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn monte_carlo_limit() {
        let r = [1.0, 2.0, 3.0];
        let (adv, ret) = compute_gae(&r, &[0.0; 3], 0.0, 1.0, 1.0).unwrap();
        assert_eq!(adv, vec![6.0, 5.0, 3.0]);
        assert_eq!(ret, adv);
        assert!(compute_gae(&r, &[0.0; 2], 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn clip_examples() {
        assert!((ppo_clip_objective(2.0, 1.0, 0.2) - 1.2).abs() < 1e-12);
        assert!((ppo_clip_objective(0.5, -1.0, 0.2) + 0.8).abs() < 1e-12);
        for a in [-3.0, 0.0, 0.7] {
            assert_eq!(ppo_clip_objective(1.0, a, 0.3), a);
        }
    }

    #[test]
    fn normalize_moments() {
        let mut xs = vec![1.0, 2.0, 3.0, 6.0];
        normalize(&mut xs);
        let mean: f64 = xs.iter().sum::<f64>() / 4.0;
        let var: f64 = xs.iter().map(|x| x * x).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        let mut flat = vec![2.0; 3];
        normalize(&mut flat);
        assert_eq!(flat, vec![0.0; 3]);
    }

    #[test]
    fn rejects_bad_gamma() {
        let cfg = PpoConfig {
            gamma: 1.5,
            ..PpoConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
