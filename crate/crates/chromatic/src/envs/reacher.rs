//! Point reacher: a 2-D double integrator steered by bounded acceleration
//! toward a seeded goal. Observation is (position, velocity, goal); reward
//! per step is the negated distance to the goal after the step. The workspace
//! is bounded: position and speed are clipped to fixed limits, so runaway
//! policies cannot blow up observations or rewards.

use super::{clip, EnvSpec, Environment, StepOutcome};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

const DT: f64 = 0.1;
const ACCEL_LIMIT: f64 = 1.0;
const GOAL_RANGE: f64 = 0.4;
const POSITION_LIMIT: f64 = 2.0;
const SPEED_LIMIT: f64 = 2.0;
const HORIZON: usize = 100;

pub struct PointReacher {
    spec: EnvSpec,
    pos: [f64; 2],
    vel: [f64; 2],
    goal: [f64; 2],
    steps: usize,
    done: bool,
}

impl PointReacher {
    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                name: "point-reacher".into(),
                observation_dim: 6,
                action_dim: 2,
                action_low: vec![-ACCEL_LIMIT; 2],
                action_high: vec![ACCEL_LIMIT; 2],
                horizon: HORIZON,
            },
            pos: [0.0; 2],
            vel: [0.0; 2],
            goal: [0.0; 2],
            steps: 0,
            done: true,
        }
    }

    /// Test hook: exact state placement.
    pub fn set_state(&mut self, pos: [f64; 2], vel: [f64; 2], goal: [f64; 2]) {
        self.pos = pos;
        self.vel = vel;
        self.goal = goal;
        self.steps = 0;
        self.done = false;
    }

    fn observation(&self) -> Vec<f64> {
        vec![
            self.pos[0], self.pos[1], self.vel[0], self.vel[1], self.goal[0], self.goal[1],
        ]
    }

    fn distance(&self) -> f64 {
        let dx = self.pos[0] - self.goal[0];
        let dy = self.pos[1] - self.goal[1];
        (dx * dx + dy * dy).sqrt()
    }
}

impl Default for PointReacher {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for PointReacher {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = SplitMix64::new(seed);
        self.pos = [0.0; 2];
        self.vel = [0.0; 2];
        self.goal = [
            rng.next_range(-GOAL_RANGE, GOAL_RANGE),
            rng.next_range(-GOAL_RANGE, GOAL_RANGE),
        ];
        self.steps = 0;
        self.done = false;
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        let ax = clip(action[0], -ACCEL_LIMIT, ACCEL_LIMIT);
        let ay = clip(action[1], -ACCEL_LIMIT, ACCEL_LIMIT);
        // Explicit Euler: position advances with the pre-update velocity.
        self.pos[0] = clip(self.pos[0] + self.vel[0] * DT, -POSITION_LIMIT, POSITION_LIMIT);
        self.pos[1] = clip(self.pos[1] + self.vel[1] * DT, -POSITION_LIMIT, POSITION_LIMIT);
        self.vel[0] = clip(self.vel[0] + ax * DT, -SPEED_LIMIT, SPEED_LIMIT);
        self.vel[1] = clip(self.vel[1] + ay * DT, -SPEED_LIMIT, SPEED_LIMIT);

        self.steps += 1;
        if self.steps >= self.spec.horizon {
            self.done = true;
        }
        Ok(StepOutcome {
            obs: self.observation(),
            reward: -self.distance(),
            done: self.done,
        })
    }
}
