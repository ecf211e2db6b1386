//! Worker-pool contract and the in-process thread pool.
//!
//! Workers are stateless evaluators: a task is a pure function of the
//! iteration context (weights, normalizer snapshot, topology) and the task
//! fields (partition assignment, perturbation seed, environment seed), so
//! results never depend on which worker ran a task or in what order tasks
//! completed. Dispatch returns results sorted by task id; aggregation on the
//! coordinator side is a deterministic fold over that order.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::envs::{make_env, rollout};
use crate::es::{perturbation_from_seed, Normalizer};
use crate::topology::{NetworkTopology, Partitioning, ReadyPolicy, SharedWeightPool};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Pivot,
    Perturbed,
}

/// One rollout request. `perturb_seed` is only meaningful for perturbed
/// tasks; perturbations travel as seeds and are expanded worker-side.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalTask {
    pub task_id: u64,
    pub kind: TaskKind,
    pub perturb_seed: u64,
    pub env_seed: u64,
    pub assignment: Vec<usize>,
}

/// Per-iteration immutable snapshot shared by all tasks of one dispatch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalContext {
    pub weights_version: u64,
    pub layer_dims: Vec<usize>,
    pub num_partitions: usize,
    pub env: String,
    pub horizon: usize,
    pub sigma: f64,
    pub perturb_biases: bool,
    pub weights: Vec<f64>,
    pub biases: Vec<Vec<f64>>,
    pub normalizer: Normalizer,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: u64,
    pub reward: f64,
    pub steps: u64,
    /// Raw observation statistics of the episode, folded into the
    /// coordinator's normalizer between iterations.
    pub obs_stats: Normalizer,
}

/// Evaluates one task: realize the (possibly perturbed) policy and run one
/// episode. Pure given (ctx, task).
pub fn evaluate_task(ctx: &EvalContext, task: &EvalTask) -> Result<TaskResult> {
    let topology = NetworkTopology::new(ctx.layer_dims.clone())?;
    let partitioning = Partitioning::new(ctx.num_partitions, task.assignment.clone())?;
    let mut pool = SharedWeightPool {
        weights: ctx.weights.clone(),
        biases: ctx.biases.clone(),
    };
    if task.kind == TaskKind::Perturbed {
        let dim = pool.param_dim(ctx.perturb_biases);
        let g = perturbation_from_seed(task.perturb_seed, dim);
        pool = pool.with_offset(&g, ctx.sigma, ctx.perturb_biases)?;
    }
    let policy = ReadyPolicy::chromatic(&topology, &partitioning, &pool)?;
    let mut env = make_env(&ctx.env)?;
    let mut obs_stats = Normalizer::new(env.spec().observation_dim);
    let mut act = |obs: &[f64]| policy.act(obs);
    let outcome = rollout(
        &mut act,
        env.as_mut(),
        task.env_seed,
        &ctx.normalizer,
        Some(&mut obs_stats),
    )?;
    Ok(TaskResult {
        task_id: task.task_id,
        reward: outcome.total_reward,
        steps: outcome.steps,
        obs_stats,
    })
}

pub trait WorkerPool {
    /// Evaluates every task exactly once (after at most one retry per task)
    /// and returns the results sorted by task id.
    fn dispatch(&mut self, ctx: &EvalContext, tasks: &[EvalTask]) -> Result<Vec<TaskResult>>;
}

/// Runs `f` over `items` on `threads` OS threads and returns outputs in item
/// order. Each failed item is retried once; a second failure aborts.
pub fn parallel_map<T: Sync, R: Send>(
    threads: usize,
    items: &[T],
    f: impl Fn(&T) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    let threads = threads.max(1);
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<R>>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..threads.min(items.len().max(1)) {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= items.len() {
                    break;
                }
                let mut out = f(&items[idx]);
                if out.is_err() {
                    out = f(&items[idx]);
                }
                *slots[idx].lock().unwrap() = Some(out);
            });
        }
    });
    let mut results = Vec::with_capacity(items.len());
    for slot in slots {
        match slot.into_inner().unwrap() {
            Some(Ok(r)) => results.push(r),
            Some(Err(e)) => return Err(Error::WorkerFailure(e.to_string())),
            None => return Err(Error::WorkerFailure("task never ran".into())),
        }
    }
    Ok(results)
}

/// Thread pool inside the coordinator process.
pub struct InProcessPool {
    threads: usize,
}

impl InProcessPool {
    pub fn new(threads: usize) -> Self {
        Self {
            threads: threads.max(1),
        }
    }
}

impl WorkerPool for InProcessPool {
    fn dispatch(&mut self, ctx: &EvalContext, tasks: &[EvalTask]) -> Result<Vec<TaskResult>> {
        let mut results = parallel_map(self.threads, tasks, |t| evaluate_task(ctx, t))?;
        results.sort_by_key(|r| r.task_id);
        Ok(results)
    }
}
