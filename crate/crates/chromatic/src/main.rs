//! Command-line entry point: training, evaluation, analysis, transfer,
//! baselines, and the remote worker process.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use chromatic::analysis;
use chromatic::envs::{env_spec, list_env_specs, make_env, rollout};
use chromatic::error::{Error, Result};
use chromatic::es::Normalizer;
use chromatic::orchestrator::baseline::{BaselineConfig, BaselineTrainer};
use chromatic::orchestrator::checkpoint::{
    load_checkpoint, transfer_top_k, Checkpoint,
};
use chromatic::orchestrator::logging::RunDir;
use chromatic::orchestrator::pool::{InProcessPool, WorkerPool};
use chromatic::orchestrator::remote::{run_worker, RemotePool, RunInfo};
use chromatic::orchestrator::{run_training, run_training_with, RunMode, TrainConfig, Trainer};
use chromatic::rng::{derive_seed, SplitMix64};
use chromatic::topology::{NetworkTopology, Partitioning, PolicyKind, PolicySpec};

#[derive(Parser)]
#[command(name = "chromatic", version, about = "Compact RL policies via learned weight-sharing partitionings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a chromatic policy.
    Train(TrainArgs),
    /// Evaluate a trained policy or checkpoint.
    Eval(EvalArgs),
    /// Compute partition metrics for a finished run.
    Analyze(AnalyzeArgs),
    /// Retrain the top-k partitionings of a checkpoint on another env.
    Transfer(TransferArgs),
    /// Train a structured baseline (toeplitz, circulant, masked, unstructured).
    Baseline(BaselineArgs),
    /// Run a remote worker connected to a coordinator.
    Worker(WorkerArgs),
    /// List the built-in environments as JSON.
    Envs,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    arch: Option<String>,
    /// Number of color classes M.
    #[arg(long)]
    partitions: Option<usize>,
    #[arg(long)]
    mode: Option<RunMode>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Population size k: perturbation/partitioning pairs per iteration.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    rollouts_per_partition: Option<usize>,
    /// Weight iterations between controller phases.
    #[arg(long)]
    controller_period: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long)]
    perturb_biases: Option<bool>,
    #[arg(long)]
    controller_lr: Option<f64>,
    #[arg(long)]
    entropy_weight: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    task_timeout: Option<u64>,
    /// JSON file with a fixed assignment array (fixed-partition mode).
    #[arg(long)]
    fixed_assignment: Option<PathBuf>,
    /// Output run directory.
    #[arg(long)]
    out: PathBuf,
    /// In-process worker threads (ignored with --listen).
    #[arg(long, default_value_t = 8)]
    threads: usize,
    /// Listen address for remote TCP workers, e.g. 127.0.0.1:7700.
    #[arg(long)]
    listen: Option<String>,
    /// With --listen: wait for this many workers before starting.
    #[arg(long, default_value_t = 1)]
    min_workers: usize,
    /// Resume from the run directory's latest checkpoint.
    #[arg(long, default_value_t = false)]
    resume: bool,
    /// Progress lines to stderr every N iterations (0 = quiet).
    #[arg(long, default_value_t = 10)]
    progress: usize,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint file (chromatic or baseline); evaluates with the trained
    /// observation normalizer.
    #[arg(long, conflicts_with = "policy")]
    checkpoint: Option<PathBuf>,
    /// final_policy.json file; evaluates without observation normalization.
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long)]
    env: String,
    #[arg(long, default_value_t = 10)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the JSON summary here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Run directory (needs config.json and partitions.jsonl).
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TransferArgs {
    /// Source checkpoint with a scored partition population.
    #[arg(long)]
    from: PathBuf,
    #[arg(long, default_value_t = 5)]
    top_k: usize,
    /// Target environment (dims must match the source topology).
    #[arg(long)]
    env: String,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value_t = 8)]
    threads: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BaselineArgs {
    /// toeplitz | circulant | masked | unstructured
    #[arg(long = "type")]
    kind: String,
    #[arg(long)]
    env: String,
    #[arg(long, default_value = "L")]
    arch: String,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    workers: usize,
    #[arg(long, default_value_t = 8)]
    threads: usize,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta_floor: Option<f64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    progress: usize,
}

#[derive(Args)]
struct WorkerArgs {
    /// Coordinator address, e.g. 127.0.0.1:7700.
    #[arg(long)]
    connect: String,
    #[arg(long, default_value_t = 20)]
    max_reconnects: u32,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are successes; anything else is a config
            // error (exit 1).
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let phase = std::cell::Cell::new(Phase::Config);
    let result = match cli.command {
        Command::Train(args) => cmd_train(args, &phase),
        Command::Eval(args) => cmd_eval(args, &phase),
        Command::Analyze(args) => cmd_analyze(args, &phase),
        Command::Transfer(args) => cmd_transfer(args, &phase),
        Command::Baseline(args) => cmd_baseline(args, &phase),
        Command::Worker(args) => cmd_worker(args, &phase),
        Command::Envs => cmd_envs(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match phase.get() {
                Phase::Config => ExitCode::from(1),
                Phase::Runtime => ExitCode::from(2),
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Phase {
    Config,
    Runtime,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn effective_train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = &args.env {
        cfg.env = v.clone();
    }
    if let Some(v) = &args.arch {
        cfg.arch = v.clone();
    }
    if let Some(v) = args.partitions {
        cfg.partitions = v;
    }
    if let Some(v) = args.mode {
        cfg.mode = v;
    }
    if let Some(v) = args.iters {
        cfg.iterations = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.workers {
        cfg.workers = v;
    }
    if let Some(v) = args.rollouts_per_partition {
        cfg.rollouts_per_partition = v;
    }
    if let Some(v) = args.controller_period {
        cfg.controller_period = v;
    }
    if let Some(v) = args.sigma {
        cfg.es.sigma = v;
    }
    if let Some(v) = args.step_size {
        cfg.es.step_size = v;
    }
    if let Some(v) = args.perturb_biases {
        cfg.es.perturb_biases = v;
    }
    if let Some(v) = args.controller_lr {
        cfg.controller.learning_rate = v;
    }
    if let Some(v) = args.entropy_weight {
        cfg.controller.entropy_weight = v;
    }
    if let Some(v) = args.temperature {
        cfg.controller.temperature = v;
    }
    if let Some(v) = args.checkpoint_every {
        cfg.checkpoint_every = v;
    }
    if let Some(v) = args.task_timeout {
        cfg.task_timeout_secs = v;
    }
    if let Some(path) = &args.fixed_assignment {
        cfg.fixed_assignment = Some(read_json(path)?);
    }
    cfg.resolve()?;
    Ok(cfg)
}

fn latest_checkpoint(run_dir: &Path) -> Result<PathBuf> {
    let final_path = run_dir.join("checkpoints").join("final.json");
    if final_path.exists() {
        return Ok(final_path);
    }
    let mut newest: Option<PathBuf> = None;
    for entry in std::fs::read_dir(run_dir.join("checkpoints"))? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("json")
            && newest.as_ref().is_none_or(|n| path > *n) {
                newest = Some(path);
            }
    }
    newest.ok_or_else(|| Error::Config(format!("no checkpoint in {}", run_dir.display())))
}

fn make_pool(
    listen: &Option<String>,
    threads: usize,
    min_workers: usize,
    cfg: &TrainConfig,
) -> Result<Box<dyn WorkerPool>> {
    match listen {
        None => Ok(Box::new(InProcessPool::new(threads))),
        Some(addr) => {
            let mut pool = RemotePool::bind(
                addr,
                RunInfo {
                    layer_dims: cfg.layer_dims.clone(),
                    num_partitions: cfg.partitions,
                },
                Duration::from_secs(cfg.task_timeout_secs),
            )?;
            eprintln!(
                "listening on {} for workers ({} required)",
                pool.local_addr()?,
                min_workers
            );
            pool.wait_for_workers(min_workers, Duration::from_secs(300))?;
            Ok(Box::new(pool))
        }
    }
}

fn cmd_train(args: TrainArgs, phase: &std::cell::Cell<Phase>) -> Result<()> {
    let (mut trainer, mut run_dir) = if args.resume {
        let ckpt = load_checkpoint(&latest_checkpoint(&args.out)?)?;
        let mut cfg = ckpt.config.clone();
        if let Some(iters) = args.iters {
            cfg.iterations = iters;
        }
        let mut ckpt = ckpt;
        ckpt.config = cfg;
        let trainer = Trainer::from_checkpoint(ckpt)?;
        let run_dir = RunDir::open_for_resume(&args.out)?;
        (trainer, run_dir)
    } else {
        let cfg = effective_train_config(&args)?;
        let trainer = Trainer::new(cfg)?;
        let run_dir = RunDir::create(&args.out, &serde_json::to_value(trainer.config())?)?;
        (trainer, run_dir)
    };

    let mut pool = make_pool(&args.listen, args.threads, args.min_workers, trainer.config())?;
    phase.set(Phase::Runtime);

    let progress = args.progress;
    let summary = run_training_with(&mut trainer, pool.as_mut(), &mut run_dir, |record| {
        if progress > 0 && (record.iteration + 1) % progress == 0 {
            eprintln!(
                "iter {}: mean {:.3} max {:.3} best {:.3}",
                record.iteration + 1,
                record.mean_reward,
                record.max_reward,
                record.best_reward
            );
        }
    })?;
    eprintln!(
        "done: {} iterations, best reward {:.3}, final mean {:.3}",
        summary.iterations_run,
        summary.best_reward.unwrap_or(f64::NAN),
        summary.final_mean_reward
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalSummary {
    env: String,
    episodes: usize,
    seed: u64,
    mean_reward: f64,
    max_reward: f64,
    min_reward: f64,
    rewards: Vec<f64>,
}

fn cmd_eval(args: EvalArgs, phase: &std::cell::Cell<Phase>) -> Result<()> {
    let (spec, normalizer): (PolicySpec, Normalizer) = if let Some(path) = &args.checkpoint {
        load_any_checkpoint_policy(path)?
    } else if let Some(path) = &args.policy {
        let spec: PolicySpec = read_json(path)?;
        let dim = env_spec(&args.env)?.observation_dim;
        (spec, Normalizer::new(dim))
    } else {
        return Err(Error::Config("eval needs --checkpoint or --policy".into()));
    };

    let env_info = env_spec(&args.env)?;
    if spec.layer_dims.first() != Some(&env_info.observation_dim)
        || spec.layer_dims.last() != Some(&env_info.action_dim)
    {
        return Err(Error::Config(format!(
            "policy dims {:?} do not match env `{}` dims ({}, {})",
            spec.layer_dims, args.env, env_info.observation_dim, env_info.action_dim
        )));
    }
    if args.episodes == 0 {
        return Err(Error::Config("episodes must be >= 1".into()));
    }
    let policy = spec.instantiate()?;
    phase.set(Phase::Runtime);

    let mut rewards = Vec::with_capacity(args.episodes);
    for episode in 0..args.episodes {
        let mut env = make_env(&args.env)?;
        let mut act = |obs: &[f64]| policy.act(obs);
        let result = rollout(
            &mut act,
            env.as_mut(),
            args.seed + episode as u64,
            &normalizer,
            None,
        )?;
        rewards.push(result.total_reward);
    }
    let summary = EvalSummary {
        env: args.env.clone(),
        episodes: args.episodes,
        seed: args.seed,
        mean_reward: rewards.iter().sum::<f64>() / rewards.len() as f64,
        max_reward: rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        min_reward: rewards.iter().cloned().fold(f64::INFINITY, f64::min),
        rewards,
    };
    let body = serde_json::to_string_pretty(&summary)?;
    println!("{body}");
    if let Some(out) = &args.out {
        std::fs::write(out, body)?;
    }
    Ok(())
}

/// Loads either a chromatic or a baseline checkpoint and produces the policy
/// spec plus the trained normalizer.
fn load_any_checkpoint_policy(path: &Path) -> Result<(PolicySpec, Normalizer)> {
    let body = std::fs::read_to_string(path)?;
    if let Ok(ckpt) = serde_json::from_str::<Checkpoint>(&body) {
        let trainer = Trainer::from_checkpoint(ckpt.clone())?;
        return Ok((trainer.final_policy(), ckpt.normalizer));
    }
    let ckpt: chromatic::orchestrator::baseline::BaselineCheckpoint =
        serde_json::from_str(&body)
            .map_err(|e| Error::CorruptCheckpoint(format!("{}: {e}", path.display())))?;
    let trainer = BaselineTrainer::from_checkpoint(ckpt.clone())?;
    Ok((trainer.final_policy()?, ckpt.normalizer))
}

fn cmd_analyze(args: AnalyzeArgs, phase: &std::cell::Cell<Phase>) -> Result<()> {
    phase.set(Phase::Runtime);
    let records = analysis::analyze_run(&args.run, &args.out)?;
    eprintln!("wrote {} phase records to {}", records.len(), args.out.display());
    Ok(())
}

fn cmd_transfer(args: TransferArgs, phase: &std::cell::Cell<Phase>) -> Result<()> {
    let ckpt = load_checkpoint(&args.from)?;
    let target = env_spec(&args.env)?;
    let source_dims = &ckpt.config.layer_dims;
    if source_dims.first() != Some(&target.observation_dim)
        || source_dims.last() != Some(&target.action_dim)
    {
        return Err(Error::Config(format!(
            "source topology {:?} incompatible with env `{}` dims ({}, {})",
            source_dims, args.env, target.observation_dim, target.action_dim
        )));
    }
    if args.top_k == 0 {
        return Err(Error::Config("top-k must be >= 1".into()));
    }
    let (partitionings, truncated) = transfer_top_k(&ckpt, args.top_k);
    if truncated {
        eprintln!(
            "warning: population holds only {} partitionings (requested {})",
            partitionings.len(),
            args.top_k
        );
    }
    phase.set(Phase::Runtime);

    std::fs::create_dir_all(&args.out)?;
    let workers = args.workers.unwrap_or(ckpt.config.workers);
    let topology = NetworkTopology::new(source_dims.clone())?;
    let mut comparison = String::from("kind,index,best_reward,final_mean_reward\n");

    let mut run_one = |kind: &str, index: usize, assignment: Vec<usize>| -> Result<()> {
        let mut cfg = ckpt.config.clone();
        cfg.env = args.env.clone();
        cfg.mode = RunMode::FixedPartition;
        cfg.fixed_assignment = Some(assignment);
        cfg.workers = workers;
        cfg.iterations = args.iters;
        cfg.seed = derive_seed(args.seed, kind, &[index as u64]);
        let mut trainer = Trainer::new(cfg)?;
        let subdir = args.out.join(format!("{kind}_{index}"));
        let mut run_dir = RunDir::create(&subdir, &serde_json::to_value(trainer.config())?)?;
        let mut pool = InProcessPool::new(args.threads);
        let summary = run_training(&mut trainer, &mut pool, &mut run_dir)?;
        comparison.push_str(&format!(
            "{kind},{index},{},{}\n",
            summary.best_reward.unwrap_or(f64::NAN),
            summary.final_mean_reward
        ));
        Ok(())
    };

    for (index, partitioning) in partitionings.iter().enumerate() {
        run_one("transfer", index, partitioning.assignment().to_vec())?;
    }
    let mut rng = SplitMix64::new(derive_seed(args.seed, "transfer-random", &[]));
    for index in 0..partitionings.len() {
        let random = Partitioning::random_uniform(ckpt.config.partitions, &topology, &mut rng);
        run_one("random", index, random.assignment().to_vec())?;
    }
    std::fs::write(args.out.join("comparison.csv"), comparison)?;
    eprintln!("wrote {}", args.out.join("comparison.csv").display());
    Ok(())
}

fn cmd_baseline(args: BaselineArgs, phase: &std::cell::Cell<Phase>) -> Result<()> {
    let kind: PolicyKind = args.kind.parse()?;
    if kind == PolicyKind::Chromatic {
        return Err(Error::Config(
            "chromatic policies are trained with `train`, not `baseline`".into(),
        ));
    }
    let mut cfg = BaselineConfig {
        kind,
        env: args.env.clone(),
        arch: args.arch.clone(),
        workers: args.workers,
        iterations: args.iters,
        seed: args.seed,
        ..BaselineConfig::default()
    };
    if let Some(v) = args.sigma {
        cfg.es.sigma = v;
    }
    if let Some(v) = args.step_size {
        cfg.es.step_size = v;
    }
    if let Some(v) = args.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = args.beta_floor {
        cfg.beta_floor = v;
    }
    if let Some(v) = args.checkpoint_every {
        cfg.checkpoint_every = v;
    }
    let mut trainer = BaselineTrainer::new(cfg, args.threads)?;
    eprintln!(
        "baseline {}: {} weight-params on dims {:?}",
        trainer.config().kind,
        trainer.config().weight_param_count(),
        trainer.config().layer_dims
    );
    let mut run_dir = RunDir::create(&args.out, &serde_json::to_value(trainer.config())?)?;
    phase.set(Phase::Runtime);

    while trainer.iteration() < trainer.config().iterations {
        let record = trainer.run_iteration()?;
        run_dir.append_record(&record)?;
        let done = trainer.iteration();
        if done % trainer.config().checkpoint_every == 0 || done == trainer.config().iterations {
            let path = run_dir.checkpoint_path(done);
            std::fs::write(&path, serde_json::to_string(&trainer.checkpoint())?)?;
        }
        if args.progress > 0 && done % args.progress == 0 {
            eprintln!(
                "iter {done}: mean {:.3} max {:.3}{}",
                record.mean_reward,
                record.max_reward,
                record
                    .eta
                    .map(|e| format!(" eta {e:.3}"))
                    .unwrap_or_default()
            );
        }
    }
    std::fs::write(
        run_dir.final_checkpoint_path(),
        serde_json::to_string(&trainer.checkpoint())?,
    )?;
    run_dir.write_final_policy(&trainer.final_policy()?)?;
    run_dir.flush()?;
    run_dir.manifest_check()?;
    eprintln!(
        "done: best reward {:.3}",
        trainer.best_reward().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_worker(args: WorkerArgs, phase: &std::cell::Cell<Phase>) -> Result<()> {
    phase.set(Phase::Runtime);
    run_worker(&args.connect, args.max_reconnects)
}

fn cmd_envs() -> Result<()> {
    println!("{}", serde_json::to_string_pretty(&list_env_specs())?);
    Ok(())
}
