use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EnvState, Point, Step};
use crate::error::{ensure, Result};
use crate::tensor::Tensor;

/// Cooperative navigation: `n` agents should cover `n` landmarks.
///
/// Each action moves an agent by a fixed displacement (stay, up, down,
/// left, right), clamped to the square world. Collisions are penalized
/// but do not block movement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParticleEnvSpec {
    pub n_agents: usize,
    pub agent_radius: f64,
    pub landmark_radius: f64,
    /// Half-width of the world square `[-bound, bound]^2`.
    pub bound: f64,
    pub step_size: f64,
    /// Initial positions are drawn from `[-spawn_extent, spawn_extent]^2`.
    pub spawn_extent: f64,
    pub episode_length: usize,
    pub collision_reward: f64,
    /// Kept for reference; displacement dynamics do not integrate forces.
    pub acceleration: f64,
}

impl Default for ParticleEnvSpec {
    fn default() -> Self {
        Self::with_agents(3)
    }
}

impl ParticleEnvSpec {
    pub fn with_agents(n_agents: usize) -> Self {
        Self {
            n_agents,
            agent_radius: 0.15,
            landmark_radius: 0.05,
            bound: 1.0,
            step_size: 0.1,
            spawn_extent: 0.9,
            episode_length: 20,
            collision_reward: -1.0,
            acceleration: 7.0,
        }
    }

    pub fn n_landmarks(&self) -> usize {
        self.n_agents
    }

    /// Own position, own velocity, then every landmark relative to the agent.
    pub fn obs_width(&self) -> usize {
        4 + 2 * self.n_landmarks()
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.n_agents >= 1, "particle task needs at least one agent");
        ensure!(self.episode_length >= 1, "episode_length must be positive");
        ensure!(self.bound > 0.0 && self.step_size > 0.0, "bound and step_size must be positive");
        ensure!(
            self.spawn_extent > 0.0 && self.spawn_extent <= self.bound,
            "spawn_extent must lie in (0, bound]"
        );
        Ok(())
    }

    pub(crate) fn reset(&self, seed: u64) -> (EnvState, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = self.spawn_extent;
        let mut draw = || [rng.gen_range(-e..=e), rng.gen_range(-e..=e)];
        let landmarks: Vec<Point> = (0..self.n_landmarks()).map(|_| draw()).collect();
        let positions: Vec<Point> = (0..self.n_agents).map(|_| draw()).collect();
        let state = EnvState {
            velocities: vec![[0.0, 0.0]; self.n_agents],
            positions,
            landmarks,
            t: 0,
        };
        let obs = self.observations(&state);
        (state, obs)
    }

    fn displacement(&self, action: usize) -> Point {
        let s = self.step_size;
        match action {
            1 => [0.0, s],
            2 => [0.0, -s],
            3 => [-s, 0.0],
            4 => [s, 0.0],
            _ => [0.0, 0.0],
        }
    }

    pub(crate) fn step(&self, state: &EnvState, joint_action: &[usize]) -> Step {
        let mut next = state.clone();
        for (i, &a) in joint_action.iter().enumerate() {
            let d = self.displacement(a);
            let old = state.positions[i];
            let new = [
                (old[0] + d[0]).clamp(-self.bound, self.bound),
                (old[1] + d[1]).clamp(-self.bound, self.bound),
            ];
            next.velocities[i] = [new[0] - old[0], new[1] - old[1]];
            next.positions[i] = new;
        }
        next.t += 1;
        let reward = self.team_reward(&next);
        Step {
            observations: self.observations(&next),
            done: next.t >= self.episode_length,
            state: next,
            reward,
        }
    }

    /// One agent's view. Other agents never appear in it.
    pub fn observe(&self, state: &EnvState, agent: usize) -> Vec<f64> {
        let p = state.positions[agent];
        let v = state.velocities[agent];
        let mut o = Vec::with_capacity(self.obs_width());
        o.extend_from_slice(&[p[0], p[1], v[0], v[1]]);
        for l in &state.landmarks {
            o.push(l[0] - p[0]);
            o.push(l[1] - p[1]);
        }
        o
    }

    pub fn observations(&self, state: &EnvState) -> Tensor {
        let rows: Vec<Vec<f64>> = (0..self.n_agents).map(|i| self.observe(state, i)).collect();
        Tensor::from_rows(&rows).expect("observations share one width")
    }

    /// `-sum_i d_i + C * collision_reward`, with `d_i` the distance from
    /// landmark `i` to its nearest agent and `C` the number of agent pairs
    /// closer than the sum of their radii.
    pub fn team_reward(&self, state: &EnvState) -> f64 {
        let dist = |a: Point, b: Point| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        let coverage: f64 = state
            .landmarks
            .iter()
            .map(|&l| {
                state
                    .positions
                    .iter()
                    .map(|&p| dist(l, p))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        let mut collisions = 0usize;
        for i in 0..state.positions.len() {
            for j in i + 1..state.positions.len() {
                if dist(state.positions[i], state.positions[j]) < 2.0 * self.agent_radius {
                    collisions += 1;
                }
            }
        }
        -coverage + collisions as f64 * self.collision_reward
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvSpec;

    fn state(positions: Vec<Point>, landmarks: Vec<Point>) -> EnvState {
        EnvState {
            velocities: vec![[0.0; 2]; positions.len()],
            positions,
            landmarks,
            t: 0,
        }
    }

    #[test]
    fn reward_examples() {
        let spec = ParticleEnvSpec::with_agents(3);
        let covered = state(
            vec![[-0.5, 0.0], [0.0, 0.5], [0.5, 0.0]],
            vec![[-0.5, 0.0], [0.0, 0.5], [0.5, 0.0]],
        );
        assert_eq!(spec.team_reward(&covered), 0.0);

        let mut one_off = covered.clone();
        one_off.landmarks[1] = [0.0, 0.5 + 0.5];
        // nearest agent to (0, 1) is agent 1 at distance 0.5
        assert!((spec.team_reward(&one_off) + 0.5).abs() < 1e-12);

        let two = ParticleEnvSpec::with_agents(2);
        let close = state(vec![[0.0, 0.0], [0.2, 0.0]], vec![[0.0, 0.0], [0.2, 0.0]]);
        assert!((two.team_reward(&close) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn reset_is_seeded() {
        let spec = EnvSpec::particle(3);
        assert_eq!(spec.reset(42), spec.reset(42));
        let mut differ = 0;
        for s in 0..100u64 {
            if spec.reset(2 * s).0.landmarks != spec.reset(2 * s + 1).0.landmarks {
                differ += 1;
            }
        }
        assert_eq!(differ, 100);
    }

    #[test]
    fn obs_width_for_three_agents() {
        assert_eq!(EnvSpec::particle(3).obs_width(), 10);
    }

    #[test]
    fn moves_clamp_and_episode_ends() {
        let spec = ParticleEnvSpec::with_agents(1);
        let mut s = state(vec![[0.95, 0.0]], vec![[0.0, 0.0]]);
        let out = spec.step(&s, &[4]);
        assert_eq!(out.state.positions[0], [1.0, 0.0]);
        assert!((out.state.velocities[0][0] - 0.05).abs() < 1e-12);
        s.t = 19;
        assert!(spec.step(&s, &[0]).done);
    }

    #[test]
    fn observation_ignores_other_agents() {
        let spec = ParticleEnvSpec::with_agents(3);
        let (s, _) = EnvSpec::Particle(spec.clone()).reset(7);
        let mut moved = s.clone();
        moved.positions[2] = [-0.8, 0.8];
        assert_eq!(spec.observe(&s, 0), spec.observe(&moved, 0));
    }
}
