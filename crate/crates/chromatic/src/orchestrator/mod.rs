//! Alternating-optimization training loop: a coordinator owns all mutable
//! state, dispatches (perturbation, partitioning) rollout tasks to a worker
//! pool, folds the results into an ES weight update, and periodically updates
//! the partition sampler (the controller, in enas mode) from per-partition
//! max rewards.
//!
//! Everything stochastic is derived from the master seed and counters
//! (`rng::derive_seed`), and every fold runs in task-id order, so a run is a
//! deterministic function of (config, seed) regardless of worker count,
//! completion order, or pool transport.

pub mod baseline;
pub mod checkpoint;
pub mod logging;
pub mod pool;
pub mod remote;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::analysis::PhaseSnapshot;
use crate::controller::{ControllerConfig, ControllerState, SampleBatch};
use crate::envs::{env_spec, EnvSpec};
use crate::error::{Error, Result};
use crate::es::{apply_update, es_gradient, normalize_rewards, ESConfig, Normalizer};
use crate::rng::{derive_seed, SplitMix64};
use crate::topology::{NetworkTopology, Partitioning, PolicyKind, PolicySpec, SharedWeightPool};
use checkpoint::{Checkpoint, RngCursor, CHECKPOINT_SCHEMA_VERSION};
use logging::RunDir;
use pool::{EvalContext, EvalTask, TaskKind, TaskResult, WorkerPool};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    Enas,
    RandomController,
    FixedRandomPopulation,
    FixedPartition,
}

impl std::fmt::Display for RunMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RunMode::Enas => "enas",
            RunMode::RandomController => "random-controller",
            RunMode::FixedRandomPopulation => "fixed-random-population",
            RunMode::FixedPartition => "fixed-partition",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for RunMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "enas" => Ok(RunMode::Enas),
            "random-controller" => Ok(RunMode::RandomController),
            "fixed-random-population" => Ok(RunMode::FixedRandomPopulation),
            "fixed-partition" => Ok(RunMode::FixedPartition),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

/// Resolves an architecture label against environment dimensions.
/// "L" is linear, "H41" one hidden layer of 41, "H41,H41" two such layers;
/// anything else is parsed as explicit comma-separated dimensions.
pub fn resolve_arch(arch: &str, obs_dim: usize, act_dim: usize) -> Result<Vec<usize>> {
    let arch = arch.trim();
    if arch.eq_ignore_ascii_case("L") {
        return Ok(vec![obs_dim, act_dim]);
    }
    let parts: Vec<&str> = arch.split(',').map(str::trim).collect();
    if parts.iter().all(|p| p.starts_with('H') || p.starts_with('h')) {
        let mut dims = vec![obs_dim];
        for p in &parts {
            let h: usize = p[1..]
                .parse()
                .map_err(|_| Error::Config(format!("bad architecture label `{arch}`")))?;
            dims.push(h);
        }
        dims.push(act_dim);
        return Ok(dims);
    }
    let dims: Vec<usize> = parts
        .iter()
        .map(|p| {
            p.parse::<usize>()
                .map_err(|_| Error::Config(format!("bad architecture `{arch}`")))
        })
        .collect::<Result<_>>()?;
    if dims.first() != Some(&obs_dim) || dims.last() != Some(&act_dim) {
        return Err(Error::Config(format!(
            "explicit dims {dims:?} must start with the observation dim {obs_dim} and end with the action dim {act_dim}"
        )));
    }
    Ok(dims)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub env: String,
    pub arch: String,
    /// Resolved layer dimensions (echoed so run analyzers need no env).
    pub layer_dims: Vec<usize>,
    /// Number of color classes M.
    pub partitions: usize,
    /// Population size k: partitionings (and perturbations) per iteration.
    pub workers: usize,
    pub rollouts_per_partition: usize,
    /// Weight iterations between controller phases.
    pub controller_period: usize,
    pub mode: RunMode,
    pub iterations: usize,
    pub seed: u64,
    pub es: ESConfig,
    pub controller: ControllerConfig,
    /// Assignment for fixed-partition mode; a seeded uniform one is drawn
    /// when absent.
    pub fixed_assignment: Option<Vec<usize>>,
    pub checkpoint_every: usize,
    pub task_timeout_secs: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: String::new(),
            arch: "L".into(),
            layer_dims: Vec::new(),
            partitions: 8,
            workers: 301,
            rollouts_per_partition: 1,
            controller_period: 10,
            mode: RunMode::Enas,
            iterations: 100,
            seed: 0,
            es: ESConfig::default(),
            controller: ControllerConfig::default(),
            fixed_assignment: None,
            checkpoint_every: 50,
            task_timeout_secs: 60,
        }
    }
}

impl TrainConfig {
    /// Fills in `layer_dims` from env/arch and validates everything.
    pub fn resolve(&mut self) -> Result<()> {
        if self.env.is_empty() {
            return Err(Error::Config("no environment selected".into()));
        }
        let spec = env_spec(&self.env)?;
        self.layer_dims = resolve_arch(&self.arch, spec.observation_dim, spec.action_dim)?;
        NetworkTopology::new(self.layer_dims.clone())?;
        if self.partitions == 0 {
            return Err(Error::Config("partitions must be >= 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        if self.controller_period == 0 {
            return Err(Error::Config("controller period must be >= 1".into()));
        }
        if self.rollouts_per_partition == 0 {
            return Err(Error::Config("rollouts per partition must be >= 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        self.es.num_perturbations = self.workers;
        self.es.validate().map_err(|e| Error::Config(e.to_string()))?;
        if let Some(assignment) = &self.fixed_assignment {
            let topo = NetworkTopology::new(self.layer_dims.clone())?;
            if assignment.len() != topo.edge_count() {
                return Err(Error::Config(format!(
                    "fixed assignment has {} entries, topology has {} edges",
                    assignment.len(),
                    topo.edge_count()
                )));
            }
            if assignment.iter().any(|&c| c >= self.partitions) {
                return Err(Error::Config("fixed assignment color out of range".into()));
            }
        }
        Ok(())
    }
}

/// Reward bookkeeping for one partitioning while it lives in the population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionScore {
    /// Maximum reward over all rollouts using this partitioning since it was
    /// sampled; None until the first rollout lands.
    pub max_reward: Option<f64>,
    pub rollouts: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PopulationMember {
    /// Monotone id; doubles as the sample-time tie-breaker.
    pub seq: u64,
    pub partitioning: Partitioning,
    pub log_prob: f64,
    pub entropy: f64,
    pub score: PartitionScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestPartition {
    pub assignment: Vec<usize>,
    pub reward: f64,
}

/// Per-iteration summary. `wall_clock_ms` is measured but deliberately not
/// serialized: logs must be byte-identical across reruns and pool layouts,
/// so timing goes to a sidecar CSV instead.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub mean_reward: f64,
    pub max_reward: f64,
    pub best_reward: f64,
    pub controller_entropy: f64,
    pub pivot_loss: f64,
    pub color_usage: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eta: Option<f64>,
    #[serde(skip, default)]
    pub wall_clock_ms: f64,
}

pub struct Trainer {
    cfg: TrainConfig,
    topology: NetworkTopology,
    env_spec: EnvSpec,
    pool_params: SharedWeightPool,
    controller: ControllerState,
    normalizer: Normalizer,
    population: Vec<PopulationMember>,
    iteration: usize,
    weights_version: u64,
    next_member_seq: u64,
    best_reward: Option<f64>,
    best_partition: Option<BestPartition>,
}

impl Trainer {
    pub fn new(mut cfg: TrainConfig) -> Result<Self> {
        cfg.resolve()?;
        let topology = NetworkTopology::new(cfg.layer_dims.clone())?;
        let env = env_spec(&cfg.env)?;
        let controller = ControllerState::new(
            topology.edge_count(),
            cfg.partitions,
            cfg.controller.clone(),
            derive_seed(cfg.seed, "controller-init", &[]),
        )?;
        let normalizer = Normalizer::new(env.observation_dim);
        let pool_params = SharedWeightPool::zeros(cfg.partitions, &topology);
        let mut trainer = Self {
            cfg,
            topology,
            env_spec: env,
            pool_params,
            controller,
            normalizer,
            population: Vec::new(),
            iteration: 0,
            weights_version: 0,
            next_member_seq: 0,
            best_reward: None,
            best_partition: None,
        };
        trainer.init_population()?;
        Ok(trainer)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn best_reward(&self) -> Option<f64> {
        self.best_reward
    }

    pub fn population(&self) -> &[PopulationMember] {
        &self.population
    }

    pub fn controller(&self) -> &ControllerState {
        &self.controller
    }

    pub fn pool_params(&self) -> &SharedWeightPool {
        &self.pool_params
    }

    fn next_seq(&mut self) -> u64 {
        let s = self.next_member_seq;
        self.next_member_seq += 1;
        s
    }

    fn uniform_member(&mut self, rng: &mut SplitMix64) -> PopulationMember {
        let partitioning = Partitioning::random_uniform(self.cfg.partitions, &self.topology, rng);
        // A uniform i.i.d. coloring has per-step entropy ln M at every edge.
        let uniform_entropy =
            self.topology.edge_count() as f64 * (self.cfg.partitions as f64).ln();
        PopulationMember {
            seq: self.next_seq(),
            partitioning,
            log_prob: -uniform_entropy,
            entropy: uniform_entropy,
            score: PartitionScore {
                max_reward: None,
                rollouts: 0,
            },
        }
    }

    fn controller_members(&mut self, count: usize, seed: u64) -> Result<Vec<PopulationMember>> {
        let batch = self.controller.sample_partitionings(count, seed)?;
        Ok(batch
            .partitionings
            .into_iter()
            .zip(batch.log_probs)
            .zip(batch.entropies)
            .map(|((partitioning, log_prob), entropy)| PopulationMember {
                seq: self.next_seq(),
                partitioning,
                log_prob,
                entropy,
                score: PartitionScore {
                    max_reward: None,
                    rollouts: 0,
                },
            })
            .collect())
    }

    fn init_population(&mut self) -> Result<()> {
        let k = self.cfg.workers;
        let seed = derive_seed(self.cfg.seed, "population", &[0]);
        self.population = match self.cfg.mode {
            RunMode::Enas => self.controller_members(k, seed)?,
            RunMode::RandomController | RunMode::FixedRandomPopulation => {
                let mut rng = SplitMix64::new(seed);
                (0..k).map(|_| self.uniform_member(&mut rng)).collect()
            }
            RunMode::FixedPartition => {
                let assignment = match &self.cfg.fixed_assignment {
                    Some(a) => a.clone(),
                    None => {
                        let mut rng = SplitMix64::new(seed);
                        Partitioning::random_uniform(self.cfg.partitions, &self.topology, &mut rng)
                            .assignment()
                            .to_vec()
                    }
                };
                let partitioning = Partitioning::new(self.cfg.partitions, assignment)?;
                partitioning.validate_for(&self.topology)?;
                vec![PopulationMember {
                    seq: self.next_seq(),
                    partitioning,
                    log_prob: 0.0,
                    entropy: 0.0,
                    score: PartitionScore {
                        max_reward: None,
                        rollouts: 0,
                    },
                }]
            }
        };
        Ok(())
    }

    /// Member index serving worker slot `i`.
    fn member_for_slot(&self, i: usize) -> usize {
        i % self.population.len()
    }

    fn eval_context(&self) -> EvalContext {
        EvalContext {
            weights_version: self.weights_version,
            layer_dims: self.cfg.layer_dims.clone(),
            num_partitions: self.cfg.partitions,
            env: self.cfg.env.clone(),
            horizon: self.env_spec.horizon,
            sigma: self.cfg.es.sigma,
            perturb_biases: self.cfg.es.perturb_biases,
            weights: self.pool_params.weights.clone(),
            biases: self.pool_params.biases.clone(),
            normalizer: self.normalizer.clone(),
        }
    }

    /// Runs one weight iteration and, on controller-phase boundaries, the
    /// controller update and population resampling. Returns the iteration
    /// record and the phase snapshot if a phase ended here.
    pub fn run_iteration(
        &mut self,
        worker_pool: &mut dyn WorkerPool,
    ) -> Result<(IterationRecord, Option<PhaseSnapshot>)> {
        let started = Instant::now();
        let iter = self.iteration;
        let k = self.cfg.workers;
        let reps = self.cfg.rollouts_per_partition;
        let ctx = self.eval_context();

        // Two tasks (pivot + perturbed) per slot and repetition; the pair
        // shares its environment seed for variance reduction.
        let mut tasks = Vec::with_capacity(2 * k * reps);
        let mut task_id = (iter as u64) * (2 * k * reps) as u64;
        for i in 0..k {
            let member = self.member_for_slot(i);
            let assignment = self.population[member].partitioning.assignment().to_vec();
            let perturb_seed = derive_seed(self.cfg.seed, "perturb", &[iter as u64, i as u64]);
            for rep in 0..reps {
                // The pivot and perturbed task of a pair share their episode
                // seed (variance reduction); distinct slots get distinct
                // episodes so each iteration covers the reset distribution.
                let env_seed =
                    derive_seed(self.cfg.seed, "env", &[iter as u64, i as u64, rep as u64]);
                for kind in [TaskKind::Pivot, TaskKind::Perturbed] {
                    tasks.push(EvalTask {
                        task_id,
                        kind,
                        perturb_seed,
                        env_seed,
                        assignment: assignment.clone(),
                    });
                    task_id += 1;
                }
            }
        }

        let results = worker_pool.dispatch(&ctx, &tasks)?;
        if results.len() != tasks.len() {
            return Err(Error::WorkerFailure(format!(
                "dispatch returned {} results for {} tasks",
                results.len(),
                tasks.len()
            )));
        }

        self.fold_results(&tasks, &results)?;

        let record = {
            let raw: Vec<f64> = results.iter().map(|r| r.reward).collect();
            let mean = raw.iter().sum::<f64>() / raw.len() as f64;
            let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut color_usage = vec![0u64; self.cfg.partitions];
            for member in &self.population {
                for (usage, count) in color_usage
                    .iter_mut()
                    .zip(member.partitioning.color_counts())
                {
                    *usage += count;
                }
            }
            let controller_entropy = self.population.iter().map(|m| m.entropy).sum::<f64>()
                / self.population.len() as f64;
            IterationRecord {
                iteration: iter,
                mean_reward: mean,
                max_reward: max,
                best_reward: self.best_reward.unwrap_or(max),
                controller_entropy,
                pivot_loss: Self::raw_pivot_loss(&tasks, &results),
                color_usage,
                eta: None,
                wall_clock_ms: started.elapsed().as_secs_f64() * 1e3,
            }
        };

        // Controller phase at the end of every C-th iteration.
        let mut snapshot = None;
        if (iter + 1).is_multiple_of(self.cfg.controller_period) {
            snapshot = Some(self.phase_snapshot(iter));
            match self.cfg.mode {
                RunMode::Enas => {
                    self.update_controller()?;
                    self.resample_enas(iter)?;
                }
                RunMode::RandomController => {
                    let seed =
                        derive_seed(self.cfg.seed, "population", &[(iter + 1) as u64]);
                    let mut rng = SplitMix64::new(seed);
                    self.population = (0..k).map(|_| self.uniform_member(&mut rng)).collect();
                }
                RunMode::FixedRandomPopulation | RunMode::FixedPartition => {}
            }
        }

        self.iteration += 1;
        Ok((record, snapshot))
    }

    /// ES weight update plus score/normalizer folds, all in task-id order.
    fn fold_results(&mut self, tasks: &[EvalTask], results: &[TaskResult]) -> Result<()> {
        let k = self.cfg.workers;
        let reps = self.cfg.rollouts_per_partition;
        let per_slot = 2 * reps;

        // Batch-normalize all rewards of the iteration; Eq-style losses are
        // negated normalized rewards.
        let raw: Vec<f64> = results.iter().map(|r| r.reward).collect();
        let normalized = normalize_rewards(&raw);

        let mut perturbed = Vec::with_capacity(k);
        let mut pivot_sum = 0.0;
        for i in 0..k {
            let base = i * per_slot;
            let mut pivot_loss = 0.0;
            let mut perturbed_loss = 0.0;
            for rep in 0..reps {
                pivot_loss += -normalized[base + 2 * rep];
                perturbed_loss += -normalized[base + 2 * rep + 1];
            }
            pivot_loss /= reps as f64;
            perturbed_loss /= reps as f64;
            pivot_sum += pivot_loss;

            let perturb_seed = tasks[base + 1].perturb_seed;
            let dim = self.pool_params.param_dim(self.cfg.es.perturb_biases);
            let g = crate::es::perturbation_from_seed(perturb_seed, dim);
            perturbed.push((g, perturbed_loss));

            // Score updates use raw rewards.
            let member = self.member_for_slot(i);
            let m = &mut self.population[member];
            for rep in 0..reps {
                for offset in [0, 1] {
                    let reward = raw[base + 2 * rep + offset];
                    m.score.max_reward = Some(match m.score.max_reward {
                        Some(r) => r.max(reward),
                        None => reward,
                    });
                    m.score.rollouts += 1;
                }
            }
        }
        let pivot = pivot_sum / k as f64;
        let gradient = es_gradient(&self.cfg.es, &perturbed, pivot)?;
        self.pool_params = apply_update(&self.pool_params, &gradient, &self.cfg.es)?;
        self.weights_version += 1;

        // Observation statistics fold, task-id order.
        for result in results {
            self.normalizer.merge(&result.obs_stats);
        }

        // Best-ever tracking (raw rewards).
        for (task, result) in tasks.iter().zip(results) {
            if self.best_reward.is_none_or(|b| result.reward > b) {
                self.best_reward = Some(result.reward);
                self.best_partition = Some(BestPartition {
                    assignment: task.assignment.clone(),
                    reward: result.reward,
                });
            }
        }
        Ok(())
    }

    /// Raw-scale pivot: mean loss (negated reward) over pivot tasks.
    fn raw_pivot_loss(tasks: &[EvalTask], results: &[TaskResult]) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (task, result) in tasks.iter().zip(results) {
            if task.kind == TaskKind::Pivot {
                sum += -result.reward;
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    fn best_member_index(&self) -> usize {
        let mut best = 0;
        for (idx, member) in self.population.iter().enumerate() {
            let best_score = self.population[best]
                .score
                .max_reward
                .unwrap_or(f64::NEG_INFINITY);
            let score = member.score.max_reward.unwrap_or(f64::NEG_INFINITY);
            if score > best_score
                || (score == best_score && member.seq < self.population[best].seq)
            {
                best = idx;
            }
        }
        best
    }

    fn phase_snapshot(&self, iter: usize) -> PhaseSnapshot {
        let best = &self.population[self.best_member_index()];
        PhaseSnapshot {
            phase: ((iter + 1) / self.cfg.controller_period) as u64,
            iteration: iter,
            assignment: best.partitioning.assignment().to_vec(),
            num_partitions: self.cfg.partitions,
            max_reward: best.score.max_reward,
            pool_weights: self.pool_params.weights.clone(),
        }
    }

    fn update_controller(&mut self) -> Result<()> {
        let batch = SampleBatch {
            partitionings: self
                .population
                .iter()
                .map(|m| m.partitioning.clone())
                .collect(),
            log_probs: self.population.iter().map(|m| m.log_prob).collect(),
            entropies: self.population.iter().map(|m| m.entropy).collect(),
        };
        let rewards: Vec<f64> = self
            .population
            .iter()
            .map(|m| {
                m.score
                    .max_reward
                    .expect("population member evaluated before controller phase")
            })
            .collect();
        self.controller.controller_update(&batch, &rewards)
    }

    /// Full resample with the top 10% of scored partitions surviving (the
    /// replay mechanism); survivors keep their scores, fresh samples start
    /// clean.
    fn resample_enas(&mut self, iter: usize) -> Result<()> {
        let k = self.cfg.workers;
        let survivors_count = k / 10;
        let mut order: Vec<usize> = (0..self.population.len()).collect();
        order.sort_by(|&a, &b| {
            let ra = self.population[a]
                .score
                .max_reward
                .unwrap_or(f64::NEG_INFINITY);
            let rb = self.population[b]
                .score
                .max_reward
                .unwrap_or(f64::NEG_INFINITY);
            rb.partial_cmp(&ra)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(self.population[a].seq.cmp(&self.population[b].seq))
        });
        let mut next: Vec<PopulationMember> = order
            .into_iter()
            .take(survivors_count)
            .map(|idx| self.population[idx].clone())
            .collect();
        next.sort_by_key(|m| m.seq);
        let fresh_seed = derive_seed(self.cfg.seed, "population", &[(iter + 1) as u64]);
        let fresh = self.controller_members(k - next.len(), fresh_seed)?;
        next.extend(fresh);
        self.population = next;
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            iteration: self.iteration,
            weights_version: self.weights_version,
            pool: self.pool_params.clone(),
            controller: self.controller.clone(),
            normalizer: self.normalizer.clone(),
            rng: RngCursor {
                master_seed: self.cfg.seed,
                next_member_seq: self.next_member_seq,
            },
            population: self.population.clone(),
            best_reward: self.best_reward,
            best_partition: self.best_partition.clone(),
            config: self.cfg.clone(),
        }
    }

    pub fn from_checkpoint(checkpoint: Checkpoint) -> Result<Self> {
        let mut cfg = checkpoint.config;
        cfg.resolve()?;
        if checkpoint.rng.master_seed != cfg.seed {
            return Err(Error::CorruptCheckpoint(
                "seed does not match config echo".into(),
            ));
        }
        let topology = NetworkTopology::new(cfg.layer_dims.clone())?;
        let env = env_spec(&cfg.env)?;
        Ok(Self {
            topology,
            env_spec: env,
            pool_params: checkpoint.pool,
            controller: checkpoint.controller,
            normalizer: checkpoint.normalizer,
            population: checkpoint.population,
            iteration: checkpoint.iteration,
            weights_version: checkpoint.weights_version,
            next_member_seq: checkpoint.rng.next_member_seq,
            best_reward: checkpoint.best_reward,
            best_partition: checkpoint.best_partition,
            cfg,
        })
    }

    /// Policy specification for the best partitioning seen so far with the
    /// current shared weights.
    pub fn final_policy(&self) -> PolicySpec {
        let assignment = self
            .best_partition
            .as_ref()
            .map(|b| b.assignment.clone())
            .unwrap_or_else(|| {
                self.population[self.best_member_index()]
                    .partitioning
                    .assignment()
                    .to_vec()
            });
        PolicySpec {
            schema_version: crate::topology::POLICY_SCHEMA_VERSION,
            kind: PolicyKind::Chromatic,
            layer_dims: self.cfg.layer_dims.clone(),
            num_partitions: Some(self.cfg.partitions),
            assignment: Some(assignment),
            weights: self.pool_params.weights.clone(),
            biases: self.pool_params.biases.clone(),
            alpha: None,
        }
    }
}

pub struct TrainSummary {
    pub iterations_run: usize,
    pub best_reward: Option<f64>,
    pub final_mean_reward: f64,
    pub records: Vec<IterationRecord>,
}

/// Drives a trainer to `cfg.iterations`, writing logs, phase snapshots and
/// checkpoints into `run_dir`.
pub fn run_training(
    trainer: &mut Trainer,
    worker_pool: &mut dyn WorkerPool,
    run_dir: &mut RunDir,
) -> Result<TrainSummary> {
    run_training_with(trainer, worker_pool, run_dir, |_| {})
}

/// As `run_training`, invoking `on_record` after every iteration.
pub fn run_training_with(
    trainer: &mut Trainer,
    worker_pool: &mut dyn WorkerPool,
    run_dir: &mut RunDir,
    mut on_record: impl FnMut(&IterationRecord),
) -> Result<TrainSummary> {
    let mut records = Vec::new();
    while trainer.iteration() < trainer.config().iterations {
        let (record, snapshot) = trainer.run_iteration(worker_pool)?;
        run_dir.append_record(&record)?;
        if let Some(snap) = snapshot {
            run_dir.append_phase(&snap)?;
        }
        let done = trainer.iteration();
        if done.is_multiple_of(trainer.config().checkpoint_every) || done == trainer.config().iterations {
            checkpoint::save_checkpoint(&run_dir.checkpoint_path(done), &trainer.checkpoint())?;
        }
        on_record(&record);
        records.push(record);
    }
    checkpoint::save_checkpoint(&run_dir.final_checkpoint_path(), &trainer.checkpoint())?;
    run_dir.write_final_policy(&trainer.final_policy())?;
    run_dir.flush()?;
    run_dir.manifest_check()?;
    Ok(TrainSummary {
        iterations_run: trainer.iteration(),
        best_reward: trainer.best_reward(),
        final_mean_reward: records.last().map(|r| r.mean_reward).unwrap_or(f64::NAN),
        records,
    })
}
