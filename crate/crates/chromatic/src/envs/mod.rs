//! Built-in desk-scale continuous-control environments and the rollout
//! engine. All dynamics use explicit Euler integration with a fixed dt,
//! favoring simplicity and determinism over integration accuracy.

mod cartpole;
mod pendulum;
mod reacher;

pub use cartpole::CartpoleContinuous;
pub use pendulum::PendulumSwingup;
pub use reacher::PointReacher;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::es::Normalizer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub observation_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Total episode reward and step count for one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub total_reward: f64,
    pub steps: u64,
    pub terminated_early: bool,
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;
    /// Resets to a seeded initial state and returns the first observation.
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    /// Advances one step. Out-of-bounds actions are clipped to the action
    /// range before the dynamics see them. Stepping a finished episode is an
    /// error.
    fn step(&mut self, action: &[f64]) -> Result<StepOutcome>;
}

pub const ENV_NAMES: [&str; 3] = ["pendulum-swingup", "cartpole-continuous", "point-reacher"];

pub fn make_env(name: &str) -> Result<Box<dyn Environment>> {
    match name {
        "pendulum-swingup" => Ok(Box::new(PendulumSwingup::new())),
        "cartpole-continuous" => Ok(Box::new(CartpoleContinuous::new())),
        "point-reacher" => Ok(Box::new(PointReacher::new())),
        other => Err(Error::UnknownEnv(other.to_string())),
    }
}

pub fn env_spec(name: &str) -> Result<EnvSpec> {
    Ok(make_env(name)?.spec().clone())
}

pub fn list_env_specs() -> Vec<EnvSpec> {
    ENV_NAMES
        .iter()
        .map(|n| env_spec(n).expect("built-in env"))
        .collect()
}

pub(crate) fn clip(v: f64, low: f64, high: f64) -> f64 {
    v.max(low).min(high)
}

/// Runs one episode: normalize observation, query the policy (whose tanh
/// output lies in [-1, 1] per dimension), rescale linearly to the action
/// bounds, step. The normalizer snapshot is read-only; raw observation
/// statistics for the episode are accumulated into `obs_stats` so a single
/// aggregator can fold them between iterations.
pub fn rollout(
    policy: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    env: &mut dyn Environment,
    env_seed: u64,
    normalizer: &Normalizer,
    obs_stats: Option<&mut Normalizer>,
) -> Result<RolloutResult> {
    let spec = env.spec().clone();
    let mut obs = env.reset(env_seed);
    let mut total_reward = 0.0;
    let mut steps = 0u64;
    let mut terminated_early = false;
    let mut stats = obs_stats;

    for _ in 0..spec.horizon {
        if let Some(s) = stats.as_deref_mut() {
            s.update(&obs);
        }
        let normalized = normalizer.normalize(&obs);
        let raw_action = policy(&normalized)?;
        if raw_action.len() != spec.action_dim {
            return Err(Error::DimensionMismatch {
                what: "policy action",
                expected: spec.action_dim,
                got: raw_action.len(),
            });
        }
        if !raw_action.iter().all(|a| a.is_finite()) {
            return Err(Error::NonFinite(format!(
                "policy action at step {steps} of {}",
                spec.name
            )));
        }
        let action: Vec<f64> = raw_action
            .iter()
            .enumerate()
            .map(|(k, &a)| {
                let low = spec.action_low[k];
                let high = spec.action_high[k];
                let scaled = low + (clip(a, -1.0, 1.0) + 1.0) * 0.5 * (high - low);
                clip(scaled, low, high)
            })
            .collect();
        let outcome = env.step(&action)?;
        total_reward += outcome.reward;
        steps += 1;
        obs = outcome.obs;
        if outcome.done {
            terminated_early = steps < spec.horizon as u64;
            break;
        }
    }

    Ok(RolloutResult {
        total_reward,
        steps,
        terminated_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_policy(action_dim: usize) -> impl FnMut(&[f64]) -> Result<Vec<f64>> {
        move |_obs: &[f64]| Ok(vec![0.0; action_dim])
    }

    #[test]
    fn unknown_env_is_an_error() {
        assert!(make_env("mujoco-ant").is_err());
    }

    #[test]
    fn specs_are_well_formed() {
        for spec in list_env_specs() {
            assert!(spec.observation_dim >= 1);
            assert!(spec.action_dim >= 1);
            assert!(spec.horizon >= 1);
            for (lo, hi) in spec.action_low.iter().zip(&spec.action_high) {
                assert!(lo.is_finite() && hi.is_finite() && lo < hi);
            }
        }
    }

    #[test]
    fn rollouts_are_deterministic() {
        for name in ENV_NAMES {
            let mut env = make_env(name).unwrap();
            let dim = env.spec().action_dim;
            let norm = Normalizer::new(env.spec().observation_dim);
            let mut policy = move |obs: &[f64]| {
                Ok(obs.iter().take(dim).map(|v| (0.3 * v).tanh()).collect())
            };
            let a = rollout(&mut policy, env.as_mut(), 42, &norm, None).unwrap();
            let b = rollout(&mut policy, env.as_mut(), 42, &norm, None).unwrap();
            assert_eq!(a, b, "{name}");
        }
    }

    #[test]
    fn rollout_rejects_non_finite_actions() {
        let mut env = make_env("point-reacher").unwrap();
        let norm = Normalizer::new(env.spec().observation_dim);
        let mut policy = |_: &[f64]| Ok(vec![f64::NAN, 0.0]);
        assert!(rollout(&mut policy, env.as_mut(), 1, &norm, None).is_err());
    }

    #[test]
    fn stepping_a_done_episode_errors() {
        let mut env = make_env("pendulum-swingup").unwrap();
        env.reset(3);
        for _ in 0..env.spec().horizon {
            env.step(&[0.0]).unwrap();
        }
        assert!(matches!(env.step(&[0.0]), Err(Error::EpisodeFinished)));
    }

    #[test]
    fn rollout_collects_observation_stats() {
        let mut env = make_env("pendulum-swingup").unwrap();
        let norm = Normalizer::new(3);
        let mut stats = Normalizer::new(3);
        let mut policy = zero_policy(1);
        let result = rollout(&mut policy, env.as_mut(), 5, &norm, Some(&mut stats)).unwrap();
        assert_eq!(stats.count, result.steps);
    }
}
