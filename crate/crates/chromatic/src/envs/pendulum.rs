//! Pendulum swing-up. A uniform rod pivoting at one end; angle 0 is upright
//! and episodes reset hanging near the bottom, so the policy must pump energy
//! and then stabilize. Reward per step is
//! −(wrap(angle)² + 0.1·ω² + 0.001·τ²) evaluated at the pre-step state.

use super::{clip, EnvSpec, Environment, StepOutcome};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

const GRAVITY: f64 = 10.0;
const MASS: f64 = 1.0;
const LENGTH: f64 = 1.0;
const DT: f64 = 0.05;
const MAX_SPEED: f64 = 8.0;
const MAX_TORQUE: f64 = 2.0;
const HORIZON: usize = 200;

pub struct PendulumSwingup {
    spec: EnvSpec,
    angle: f64,
    omega: f64,
    steps: usize,
    done: bool,
}

impl PendulumSwingup {
    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                name: "pendulum-swingup".into(),
                observation_dim: 3,
                action_dim: 1,
                action_low: vec![-MAX_TORQUE],
                action_high: vec![MAX_TORQUE],
                horizon: HORIZON,
            },
            angle: 0.0,
            omega: 0.0,
            steps: 0,
            done: true,
        }
    }

    /// Places the pendulum at an exact state; test hook for equilibrium and
    /// energy checks.
    pub fn set_state(&mut self, angle: f64, omega: f64) {
        self.angle = angle;
        self.omega = omega;
        self.steps = 0;
        self.done = false;
    }

    pub fn state(&self) -> (f64, f64) {
        (self.angle, self.omega)
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.angle.cos(), self.angle.sin(), self.omega]
    }

    /// Total mechanical energy of the rod (kinetic + potential, zero at the
    /// hanging rest state at the pivot height convention used here).
    pub fn energy(&self) -> f64 {
        let inertia = MASS * LENGTH * LENGTH / 3.0;
        0.5 * inertia * self.omega * self.omega
            + MASS * GRAVITY * (LENGTH / 2.0) * self.angle.cos()
    }
}

impl Default for PendulumSwingup {
    fn default() -> Self {
        Self::new()
    }
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut x = (a + std::f64::consts::PI) % two_pi;
    if x < 0.0 {
        x += two_pi;
    }
    x - std::f64::consts::PI
}

impl Environment for PendulumSwingup {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = SplitMix64::new(seed);
        // Hanging start: a narrow band around the bottom, so every episode
        // poses the full swing-up problem.
        self.angle = std::f64::consts::PI + rng.next_range(-0.1, 0.1);
        self.omega = rng.next_range(-0.05, 0.05);
        self.steps = 0;
        self.done = false;
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        let torque = clip(action[0], -MAX_TORQUE, MAX_TORQUE);
        let wrapped = wrap_angle(self.angle);
        let reward =
            -(wrapped * wrapped + 0.1 * self.omega * self.omega + 0.001 * torque * torque);

        let accel = (3.0 * GRAVITY / (2.0 * LENGTH)) * self.angle.sin()
            + 3.0 * torque / (MASS * LENGTH * LENGTH);
        // Explicit Euler: the angle advances with the pre-update velocity.
        self.angle += self.omega * DT;
        self.omega = clip(self.omega + accel * DT, -MAX_SPEED, MAX_SPEED);

        self.steps += 1;
        if self.steps >= self.spec.horizon {
            self.done = true;
        }
        Ok(StepOutcome {
            obs: self.observation(),
            reward,
            done: self.done,
        })
    }
}
