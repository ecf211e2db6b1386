//! Continuous-force cart-pole balancing. Classic parameters; the episode
//! fails when the pole leaves ±12° or the cart leaves ±2.4, and every step
//! taken earns +1.

use super::{clip, EnvSpec, Environment, StepOutcome};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

const GRAVITY: f64 = 9.8;
const MASS_CART: f64 = 1.0;
const MASS_POLE: f64 = 0.1;
const TOTAL_MASS: f64 = MASS_CART + MASS_POLE;
const HALF_LENGTH: f64 = 0.5;
const POLE_MASS_LENGTH: f64 = MASS_POLE * HALF_LENGTH;
const FORCE_LIMIT: f64 = 10.0;
const DT: f64 = 0.02;
const ANGLE_LIMIT: f64 = 12.0 * std::f64::consts::PI / 180.0;
const POSITION_LIMIT: f64 = 2.4;
const HORIZON: usize = 500;

pub struct CartpoleContinuous {
    spec: EnvSpec,
    // (x, x_dot, theta, theta_dot)
    state: [f64; 4],
    steps: usize,
    done: bool,
}

impl CartpoleContinuous {
    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                name: "cartpole-continuous".into(),
                observation_dim: 4,
                action_dim: 1,
                action_low: vec![-FORCE_LIMIT],
                action_high: vec![FORCE_LIMIT],
                horizon: HORIZON,
            },
            state: [0.0; 4],
            steps: 0,
            done: true,
        }
    }

    /// Test hook: start from an exact state.
    pub fn set_state(&mut self, state: [f64; 4]) {
        self.state = state;
        self.steps = 0;
        self.done = false;
    }

    pub fn state(&self) -> [f64; 4] {
        self.state
    }
}

impl Default for CartpoleContinuous {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for CartpoleContinuous {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = SplitMix64::new(seed);
        for v in &mut self.state {
            *v = rng.next_range(-0.05, 0.05);
        }
        self.steps = 0;
        self.done = false;
        self.state.to_vec()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        let force = clip(action[0], -FORCE_LIMIT, FORCE_LIMIT);
        let [x, x_dot, theta, theta_dot] = self.state;
        let cos_t = theta.cos();
        let sin_t = theta.sin();

        let temp = (force + POLE_MASS_LENGTH * theta_dot * theta_dot * sin_t) / TOTAL_MASS;
        let theta_acc = (GRAVITY * sin_t - cos_t * temp)
            / (HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * cos_t * cos_t / TOTAL_MASS));
        let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos_t / TOTAL_MASS;

        self.state = [
            x + DT * x_dot,
            x_dot + DT * x_acc,
            theta + DT * theta_dot,
            theta_dot + DT * theta_acc,
        ];

        self.steps += 1;
        let failed = self.state[0].abs() > POSITION_LIMIT || self.state[2].abs() > ANGLE_LIMIT;
        self.done = failed || self.steps >= self.spec.horizon;
        Ok(StepOutcome {
            obs: self.state.to_vec(),
            reward: 1.0,
            done: self.done,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_center_survives_the_full_horizon_under_zero_force() {
        let mut env = CartpoleContinuous::new();
        env.set_state([0.0; 4]);
        let mut steps = 0;
        loop {
            let out = env.step(&[0.0]).unwrap();
            steps += 1;
            if out.done {
                break;
            }
        }
        assert_eq!(steps, HORIZON);
        assert_eq!(env.state(), [0.0; 4]);
    }

    #[test]
    fn symmetric_perturbations_produce_mirror_trajectories() {
        let delta = 0.03;
        let mut plus = CartpoleContinuous::new();
        plus.set_state([0.0, 0.0, delta, 0.0]);
        let mut minus = CartpoleContinuous::new();
        minus.set_state([0.0, 0.0, -delta, 0.0]);
        for _ in 0..100 {
            let a = plus.step(&[0.0]).unwrap();
            let b = minus.step(&[0.0]).unwrap();
            for (pa, pb) in a.obs.iter().zip(&b.obs) {
                assert!((pa + pb).abs() < 1e-12);
            }
            if a.done || b.done {
                assert_eq!(a.done, b.done);
                break;
            }
        }
    }

    #[test]
    fn leaning_pole_eventually_falls() {
        let mut env = CartpoleContinuous::new();
        env.set_state([0.0, 0.0, 0.1, 0.0]);
        let mut steps = 0;
        loop {
            let out = env.step(&[0.0]).unwrap();
            steps += 1;
            if out.done {
                break;
            }
        }
        assert!(steps < HORIZON, "pole never fell");
    }
}
