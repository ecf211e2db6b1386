//! Vanilla-ES training of the structured baselines (Toeplitz, circulant,
//! masked, unstructured): one flat parameter vector, no controller, no
//! partition population. The masked baseline perturbs mask logits jointly
//! with the dense weights and optimizes the annealed sparsity objective.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::envs::{env_spec, make_env, rollout, EnvSpec};
use crate::error::{Error, Result};
use crate::es::{
    es_gradient, normalize_rewards, perturbation_from_seed, ESConfig, Normalizer,
};
use crate::matrix::Matrix;
use crate::orchestrator::{resolve_arch, IterationRecord};
use crate::rng::{derive_seed, SplitMix64};
use crate::topology::{
    circulant_build, circulant_param_count, masked_effective_params, masked_objective,
    toeplitz_build, toeplitz_param_count, MaskedPolicyState, NetworkTopology, PolicyKind,
    PolicySpec, ReadyPolicy, POLICY_SCHEMA_VERSION,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub kind: PolicyKind,
    pub env: String,
    pub arch: String,
    pub layer_dims: Vec<usize>,
    pub workers: usize,
    pub iterations: usize,
    pub seed: u64,
    pub es: ESConfig,
    /// Masked baseline: gate temperature.
    pub alpha: f64,
    /// Masked baseline: beta anneals linearly from 1.0 to this floor over the
    /// first half of training, then stays constant.
    pub beta_floor: f64,
    /// Masked baseline: magnitude of the initial ± mask logits.
    pub mask_init_scale: f64,
    pub checkpoint_every: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            kind: PolicyKind::Unstructured,
            env: String::new(),
            arch: "L".into(),
            layer_dims: Vec::new(),
            workers: 64,
            iterations: 100,
            seed: 0,
            es: ESConfig::default(),
            alpha: 0.01,
            beta_floor: 0.5,
            mask_init_scale: 0.05,
            checkpoint_every: 50,
        }
    }
}

impl BaselineConfig {
    pub fn resolve(&mut self) -> Result<()> {
        if self.kind == PolicyKind::Chromatic {
            return Err(Error::Config(
                "chromatic policies are trained with `train`, not `baseline`".into(),
            ));
        }
        if self.env.is_empty() {
            return Err(Error::Config("no environment selected".into()));
        }
        let spec = env_spec(&self.env)?;
        self.layer_dims = resolve_arch(&self.arch, spec.observation_dim, spec.action_dim)?;
        if self.workers == 0 || self.iterations == 0 {
            return Err(Error::Config("workers and iterations must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.beta_floor) {
            return Err(Error::Config("beta floor must be in [0, 1]".into()));
        }
        self.es.num_perturbations = self.workers;
        self.es.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Weight parameters per layer, excluding biases.
    pub fn weight_param_count(&self) -> usize {
        let topo = NetworkTopology::new(self.layer_dims.clone()).expect("resolved dims");
        (0..topo.num_weight_layers())
            .map(|l| {
                let (a, b) = topo.layer_shape(l);
                match self.kind {
                    PolicyKind::Toeplitz => toeplitz_param_count(a, b),
                    PolicyKind::Circulant => circulant_param_count(a, b),
                    PolicyKind::Unstructured | PolicyKind::Masked => a * b,
                    PolicyKind::Chromatic => unreachable!(),
                }
            })
            .sum()
    }

    /// Full trainable dimension: weight params (+ mask logits for masked)
    /// + biases.
    pub fn param_dim(&self) -> usize {
        let topo = NetworkTopology::new(self.layer_dims.clone()).expect("resolved dims");
        let weights = self.weight_param_count();
        let logits = if self.kind == PolicyKind::Masked {
            topo.edge_count()
        } else {
            0
        };
        weights + logits + topo.bias_count()
    }
}

/// Splits a flat parameter vector into the realized per-layer matrices and
/// biases. Returns the masked state alongside, when applicable.
fn realize(
    cfg: &BaselineConfig,
    topo: &NetworkTopology,
    params: &[f64],
) -> Result<(ReadyPolicy, Option<MaskedPolicyState>)> {
    if params.len() != cfg.param_dim() {
        return Err(Error::DimensionMismatch {
            what: "baseline parameters",
            expected: cfg.param_dim(),
            got: params.len(),
        });
    }
    let weight_count = cfg.weight_param_count();
    let logit_count = if cfg.kind == PolicyKind::Masked {
        topo.edge_count()
    } else {
        0
    };
    let bias_slice = &params[weight_count + logit_count..];
    let mut biases = Vec::new();
    let mut offset = 0;
    for &d in &topo.layer_dims()[1..] {
        biases.push(bias_slice[offset..offset + d].to_vec());
        offset += d;
    }

    let mut matrices = Vec::new();
    let mut masked = None;
    match cfg.kind {
        PolicyKind::Toeplitz | PolicyKind::Circulant => {
            let mut offset = 0;
            for l in 0..topo.num_weight_layers() {
                let (a, b) = topo.layer_shape(l);
                let count = match cfg.kind {
                    PolicyKind::Toeplitz => toeplitz_param_count(a, b),
                    _ => circulant_param_count(a, b),
                };
                let slice = &params[offset..offset + count];
                matrices.push(match cfg.kind {
                    PolicyKind::Toeplitz => toeplitz_build(a, b, slice)?,
                    _ => circulant_build(a, b, slice)?,
                });
                offset += count;
            }
        }
        PolicyKind::Unstructured => {
            let mut offset = 0;
            for l in 0..topo.num_weight_layers() {
                let (a, b) = topo.layer_shape(l);
                let slice = &params[offset..offset + a * b];
                matrices.push(Matrix::from_fn(a, b, |i, j| slice[i * b + j]));
                offset += a * b;
            }
        }
        PolicyKind::Masked => {
            let mut dense = Vec::new();
            let mut logits = Vec::new();
            let mut offset = 0;
            for l in 0..topo.num_weight_layers() {
                let (a, b) = topo.layer_shape(l);
                let slice = &params[offset..offset + a * b];
                dense.push(Matrix::from_fn(a, b, |i, j| slice[i * b + j]));
                offset += a * b;
            }
            for l in 0..topo.num_weight_layers() {
                let (a, b) = topo.layer_shape(l);
                let slice = &params[offset..offset + a * b];
                logits.push(Matrix::from_fn(a, b, |i, j| slice[i * b + j]));
                offset += a * b;
            }
            let state = MaskedPolicyState {
                dense_weights: dense,
                mask_logits: logits,
                alpha: cfg.alpha,
                beta: 1.0,
            };
            matrices = state.effective_matrices();
            masked = Some(state);
        }
        PolicyKind::Chromatic => unreachable!(),
    }
    Ok((ReadyPolicy::new(matrices, biases), masked))
}

/// Initial parameters: zeros, except masked logits which start as a seeded
/// exact half/half ± split so the initial sparsity is 50%.
fn initial_params(cfg: &BaselineConfig, topo: &NetworkTopology) -> Vec<f64> {
    let mut params = vec![0.0; cfg.param_dim()];
    if cfg.kind == PolicyKind::Masked {
        let edges = topo.edge_count();
        let offset = cfg.weight_param_count();
        let mut signs: Vec<f64> = (0..edges)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let mut rng = SplitMix64::new(derive_seed(cfg.seed, "mask-init", &[]));
        for i in (1..signs.len()).rev() {
            let j = rng.next_usize(i + 1);
            signs.swap(i, j);
        }
        for (slot, sign) in params[offset..offset + edges].iter_mut().zip(signs) {
            *slot = sign * cfg.mask_init_scale;
        }
    }
    params
}

fn beta_at(cfg: &BaselineConfig, iteration: usize) -> f64 {
    let half = (cfg.iterations / 2).max(1);
    if iteration >= half {
        cfg.beta_floor
    } else {
        1.0 - (1.0 - cfg.beta_floor) * iteration as f64 / half as f64
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineCheckpoint {
    pub schema_version: u32,
    pub iteration: usize,
    pub params: Vec<f64>,
    pub normalizer: Normalizer,
    pub best_reward: Option<f64>,
    pub config: BaselineConfig,
}

pub struct BaselineTrainer {
    cfg: BaselineConfig,
    topo: NetworkTopology,
    env_spec: EnvSpec,
    params: Vec<f64>,
    normalizer: Normalizer,
    iteration: usize,
    best_reward: Option<f64>,
    threads: usize,
}

struct BaselineEval {
    reward: f64,
    eta: f64,
    obs_stats: Normalizer,
}

impl BaselineTrainer {
    pub fn new(mut cfg: BaselineConfig, threads: usize) -> Result<Self> {
        cfg.resolve()?;
        let topo = NetworkTopology::new(cfg.layer_dims.clone())?;
        let env = env_spec(&cfg.env)?;
        let params = initial_params(&cfg, &topo);
        Ok(Self {
            normalizer: Normalizer::new(env.observation_dim),
            env_spec: env,
            params,
            topo,
            iteration: 0,
            best_reward: None,
            threads: threads.max(1),
            cfg,
        })
    }

    pub fn config(&self) -> &BaselineConfig {
        &self.cfg
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn best_reward(&self) -> Option<f64> {
        self.best_reward
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Current sparsity state of the unperturbed parameters (masked only).
    pub fn current_eta(&self) -> Option<f64> {
        if self.cfg.kind != PolicyKind::Masked {
            return None;
        }
        let (_, masked) = realize(&self.cfg, &self.topo, &self.params).ok()?;
        masked.map(|m| masked_effective_params(&m).1)
    }

    fn evaluate(&self, params: &[f64], env_seed: u64) -> Result<BaselineEval> {
        let (policy, masked) = realize(&self.cfg, &self.topo, params)?;
        let eta = masked
            .as_ref()
            .map(|m| masked_effective_params(m).1)
            .unwrap_or(0.0);
        let mut env = make_env(&self.cfg.env)?;
        let mut obs_stats = Normalizer::new(self.env_spec.observation_dim);
        let mut act = |obs: &[f64]| policy.act(obs);
        let outcome = rollout(
            &mut act,
            env.as_mut(),
            env_seed,
            &self.normalizer,
            Some(&mut obs_stats),
        )?;
        Ok(BaselineEval {
            reward: outcome.total_reward,
            eta,
            obs_stats,
        })
    }

    pub fn run_iteration(&mut self) -> Result<IterationRecord> {
        let started = Instant::now();
        let iter = self.iteration;
        let k = self.cfg.workers;
        let dim = self.cfg.param_dim();
        let beta = beta_at(&self.cfg, iter);

        // Task list: (params, env_seed, perturbation or None), pivot and
        // perturbed sharing the env seed per slot.
        let mut jobs: Vec<(Vec<f64>, u64, Option<Vec<f64>>)> = Vec::with_capacity(2 * k);
        for i in 0..k {
            let env_seed = derive_seed(self.cfg.seed, "env", &[iter as u64, i as u64, 0]);
            let perturb_seed = derive_seed(self.cfg.seed, "perturb", &[iter as u64, i as u64]);
            let g = perturbation_from_seed(perturb_seed, dim);
            let mut perturbed = self.params.clone();
            for (p, gv) in perturbed.iter_mut().zip(&g) {
                *p += self.cfg.es.sigma * gv;
            }
            jobs.push((self.params.clone(), env_seed, None));
            jobs.push((perturbed, env_seed, Some(g)));
        }

        let evals = super::pool::parallel_map(self.threads, &jobs, |(params, env_seed, _)| {
            self.evaluate(params, *env_seed)
        })?;

        let raw: Vec<f64> = evals.iter().map(|e| e.reward).collect();
        let normalized_rewards = normalize_rewards(&raw);
        let surrogate: Vec<f64> = if self.cfg.kind == PolicyKind::Masked {
            // Normalize rewards and (1 − eta) per batch, then combine.
            let one_minus_eta: Vec<f64> = evals.iter().map(|e| 1.0 - e.eta).collect();
            let ome_normalized = normalize_rewards(&one_minus_eta);
            normalized_rewards
                .iter()
                .zip(&ome_normalized)
                .map(|(&r, &ome)| masked_objective(r, 1.0 - ome, beta))
                .collect::<Result<_>>()?
        } else {
            normalized_rewards
        };

        let mut perturbed_losses = Vec::with_capacity(k);
        let mut pivot_sum = 0.0;
        for i in 0..k {
            pivot_sum += -surrogate[2 * i];
            let g = jobs[2 * i + 1].2.clone().expect("perturbed job has g");
            perturbed_losses.push((g, -surrogate[2 * i + 1]));
        }
        let pivot = pivot_sum / k as f64;
        let gradient = es_gradient(&self.cfg.es, &perturbed_losses, pivot)?;
        for (p, g) in self.params.iter_mut().zip(&gradient) {
            *p -= self.cfg.es.step_size * g;
        }

        for eval in &evals {
            self.normalizer.merge(&eval.obs_stats);
        }

        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
        let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if self.best_reward.is_none_or(|b| max > b) {
            self.best_reward = Some(max);
        }
        let eta = self.current_eta();

        self.iteration += 1;
        Ok(IterationRecord {
            iteration: iter,
            mean_reward: mean,
            max_reward: max,
            best_reward: self.best_reward.unwrap_or(max),
            controller_entropy: 0.0,
            pivot_loss: -raw.iter().step_by(2).sum::<f64>() / k as f64,
            color_usage: Vec::new(),
            eta,
            wall_clock_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }

    pub fn checkpoint(&self) -> BaselineCheckpoint {
        BaselineCheckpoint {
            schema_version: super::checkpoint::CHECKPOINT_SCHEMA_VERSION,
            iteration: self.iteration,
            params: self.params.clone(),
            normalizer: self.normalizer.clone(),
            best_reward: self.best_reward,
            config: self.cfg.clone(),
        }
    }

    pub fn from_checkpoint(checkpoint: BaselineCheckpoint) -> Result<Self> {
        if checkpoint.schema_version != super::checkpoint::CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::CheckpointVersion {
                expected: super::checkpoint::CHECKPOINT_SCHEMA_VERSION,
                found: checkpoint.schema_version,
            });
        }
        let mut cfg = checkpoint.config;
        cfg.resolve()?;
        let topo = NetworkTopology::new(cfg.layer_dims.clone())?;
        let env = env_spec(&cfg.env)?;
        if checkpoint.params.len() != cfg.param_dim() {
            return Err(Error::CorruptCheckpoint(
                "parameter vector does not match config".into(),
            ));
        }
        Ok(Self {
            env_spec: env,
            params: checkpoint.params,
            normalizer: checkpoint.normalizer,
            topo,
            iteration: checkpoint.iteration,
            best_reward: checkpoint.best_reward,
            threads: 1,
            cfg,
        })
    }

    /// Exports the current parameters as a policy spec. Masked policies are
    /// exported with the gate already applied.
    pub fn final_policy(&self) -> Result<PolicySpec> {
        let (_, masked) = realize(&self.cfg, &self.topo, &self.params)?;
        let weight_count = self.cfg.weight_param_count();
        let weights = match self.cfg.kind {
            PolicyKind::Masked => {
                let state = masked.expect("masked state");
                state
                    .effective_matrices()
                    .iter()
                    .flat_map(|m| m.data().to_vec())
                    .collect()
            }
            _ => self.params[..weight_count].to_vec(),
        };
        let bias_offset = self.cfg.param_dim() - self.topo.bias_count();
        let bias_slice = &self.params[bias_offset..];
        let mut biases = Vec::new();
        let mut offset = 0;
        for &d in &self.topo.layer_dims()[1..] {
            biases.push(bias_slice[offset..offset + d].to_vec());
            offset += d;
        }
        Ok(PolicySpec {
            schema_version: POLICY_SCHEMA_VERSION,
            kind: self.cfg.kind,
            layer_dims: self.cfg.layer_dims.clone(),
            num_partitions: None,
            assignment: None,
            weights,
            biases,
            alpha: (self.cfg.kind == PolicyKind::Masked).then_some(self.cfg.alpha),
        })
    }
}
