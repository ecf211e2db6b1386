//! End-to-end tests of the command-line interface via the built binary.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_chromatic"))
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("chromatic-cli-{tag}-{}", std::process::id()));
    std::fs::remove_dir_all(&dir).ok();
    dir
}

fn train_tiny_n(out: &Path, seed: u64, iters: usize, extra: &[&str]) {
    let status = bin()
        .args([
            "train",
            "--env",
            "point-reacher",
            "--arch",
            "L",
            "--partitions",
            "4",
            "--mode",
            "enas",
            "--iters",
        ])
        .arg(iters.to_string())
        .args([
            "--workers",
            "6",
            "--threads",
            "2",
            "--controller-period",
            "3",
            "--checkpoint-every",
            "3",
            "--progress",
            "0",
            "--seed",
        ])
        .arg(seed.to_string())
        .arg("--out")
        .arg(out)
        .args(extra)
        .status()
        .unwrap();
    assert!(status.success());
}

fn train_tiny(out: &Path, seed: u64, extra: &[&str]) {
    train_tiny_n(out, seed, 6, extra);
}

#[test]
fn train_writes_a_complete_run_directory_with_one_record_per_iteration() {
    let dir = tmp_dir("manifest");
    train_tiny(&dir, 5, &[]);
    for file in [
        "config.json",
        "log.jsonl",
        "rewards.csv",
        "timings.csv",
        "partitions.jsonl",
        "final_policy.json",
    ] {
        assert!(dir.join(file).exists(), "{file} missing");
    }
    assert!(dir.join("checkpoints").join("final.json").exists());
    let log = std::fs::read_to_string(dir.join("log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 6);
    // Effective config is echoed with the resolved dims.
    let config: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(config["layer_dims"], serde_json::json!([6, 2]));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn same_flags_and_seed_give_byte_identical_logs() {
    let a = tmp_dir("det-a");
    let b = tmp_dir("det-b");
    train_tiny(&a, 9, &[]);
    train_tiny(&b, 9, &[]);
    let log_a = std::fs::read(a.join("log.jsonl")).unwrap();
    let log_b = std::fs::read(b.join("log.jsonl")).unwrap();
    assert_eq!(log_a, log_b);
    let csv_a = std::fs::read(a.join("rewards.csv")).unwrap();
    let csv_b = std::fs::read(b.join("rewards.csv")).unwrap();
    assert_eq!(csv_a, csv_b);
    std::fs::remove_dir_all(&a).ok();
    std::fs::remove_dir_all(&b).ok();
}

#[test]
fn exit_codes_distinguish_config_errors() {
    // Unknown environment: config error, exit 1.
    let out = tmp_dir("exit1");
    let status = bin()
        .args([
            "train", "--env", "mujoco", "--iters", "2", "--progress", "0", "--out",
        ])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(1));

    // Unknown flag: usage error, exit 1.
    let status = bin().args(["train", "--bogus-flag"]).output().unwrap();
    assert_eq!(status.status.code(), Some(1));

    // Baseline refuses chromatic.
    let status = bin()
        .args([
            "baseline",
            "--type",
            "chromatic",
            "--env",
            "point-reacher",
            "--out",
        ])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&status.stderr);
    assert!(stderr.contains("train"), "should direct the user to `train`");
    std::fs::remove_dir_all(&out).ok();
}

#[test]
fn eval_single_episode_matches_training_rollout_determinism() {
    let dir = tmp_dir("eval");
    train_tiny(&dir, 3, &[]);
    let run = |seed: &str| -> serde_json::Value {
        let output = bin()
            .args(["eval", "--env", "point-reacher", "--episodes", "1", "--seed", seed, "--checkpoint"])
            .arg(dir.join("checkpoints").join("final.json"))
            .output()
            .unwrap();
        assert!(output.status.success());
        serde_json::from_slice(&output.stdout).unwrap()
    };
    let a = run("123");
    let b = run("123");
    assert_eq!(a["rewards"], b["rewards"]);
    assert_eq!(a["mean_reward"], a["rewards"][0]);

    // Mean over a seed set does not depend on evaluation order; with the
    // fixed per-episode seeding this reduces to the same set of episodes.
    let output = bin()
        .args(["eval", "--env", "point-reacher", "--episodes", "5", "--seed", "100", "--checkpoint"])
        .arg(dir.join("checkpoints").join("final.json"))
        .output()
        .unwrap();
    let summary: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    let rewards: Vec<f64> = summary["rewards"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    assert!((summary["mean_reward"].as_f64().unwrap() - mean).abs() < 1e-12);

    // Env dim mismatch is a config error naming the dims.
    let output = bin()
        .args(["eval", "--env", "pendulum-swingup", "--episodes", "1", "--checkpoint"])
        .arg(dir.join("checkpoints").join("final.json"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn analyze_emits_the_documented_csv() {
    let dir = tmp_dir("analyze");
    train_tiny(&dir, 4, &[]);
    let csv = dir.join("metrics.csv");
    let status = bin()
        .args(["analyze", "--run"])
        .arg(&dir)
        .arg("--out")
        .arg(&csv)
        .status()
        .unwrap();
    assert!(status.success());
    let body = std::fs::read_to_string(&csv).unwrap();
    let mut lines = body.lines();
    assert_eq!(
        lines.next().unwrap(),
        chromatic::analysis::METRICS_CSV_HEADER
    );
    assert_eq!(lines.count(), 2); // 6 iterations, controller period 3
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn transfer_produces_two_rows_per_partitioning() {
    let src = tmp_dir("transfer-src");
    train_tiny(&src, 6, &[]);
    let out = tmp_dir("transfer-out");
    let status = bin()
        .args(["transfer", "--top-k", "2", "--env", "point-reacher", "--iters", "3", "--workers", "4", "--threads", "2", "--from"])
        .arg(src.join("checkpoints").join("final.json"))
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let comparison = std::fs::read_to_string(out.join("comparison.csv")).unwrap();
    let lines: Vec<&str> = comparison.lines().collect();
    assert_eq!(lines[0], "kind,index,best_reward,final_mean_reward");
    assert_eq!(lines.len(), 1 + 4); // 2 transfer + 2 random
    assert!(out.join("transfer_0").join("log.jsonl").exists());
    assert!(out.join("random_1").join("log.jsonl").exists());

    // The inherited partitionings carry their assignments over unchanged.
    let ckpt: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(src.join("checkpoints").join("final.json")).unwrap(),
    )
    .unwrap();
    let transfer_cfg: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.join("transfer_0").join("config.json")).unwrap(),
    )
    .unwrap();
    let population = ckpt["population"].as_array().unwrap();
    let inherited = transfer_cfg["fixed_assignment"].clone();
    assert!(
        population
            .iter()
            .any(|m| m["partitioning"]["assignment"] == inherited),
        "transfer run 0 must reuse a population assignment"
    );
    // Dim mismatch errors name both shapes.
    let output = bin()
        .args(["transfer", "--top-k", "1", "--env", "pendulum-swingup", "--from"])
        .arg(src.join("checkpoints").join("final.json"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("[6, 2]") && stderr.contains("pendulum"));
    std::fs::remove_dir_all(&src).ok();
    std::fs::remove_dir_all(&out).ok();
}

#[test]
fn resume_continues_to_the_requested_iteration_count() {
    let dir = tmp_dir("resume");
    train_tiny(&dir, 8, &[]);
    let status = bin()
        .args(["train", "--resume", "--iters", "9", "--progress", "0", "--out"])
        .arg(&dir)
        .status()
        .unwrap();
    assert!(status.success());
    let log = std::fs::read_to_string(dir.join("log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 9);

    // The resumed tail must equal an uninterrupted 9-iteration run.
    let full = tmp_dir("resume-full");
    train_tiny_n(&full, 8, 9, &[]);
    let full_log = std::fs::read_to_string(full.join("log.jsonl")).unwrap();
    assert_eq!(log, full_log);
    std::fs::remove_dir_all(&dir).ok();
    std::fs::remove_dir_all(&full).ok();
}

#[test]
fn eval_of_a_trained_pendulum_policy_is_consistent_with_training_rewards() {
    // Fixed-partition pendulum training, then checkpoint evaluation on fresh
    // seeds. The training max is an optimistic order statistic over ~15k
    // rollouts, so the frozen consistency bands are: evaluation max within
    // 10% of the training max, evaluation mean within 25%.
    let dir = tmp_dir("consistency");
    let status = bin()
        .args([
            "train", "--env", "pendulum-swingup", "--arch", "L", "--partitions", "8",
            "--mode", "fixed-partition", "--iters", "120", "--workers", "64",
            "--threads", "2", "--seed", "3", "--progress", "0", "--out",
        ])
        .arg(&dir)
        .status()
        .unwrap();
    assert!(status.success());
    let log = std::fs::read_to_string(dir.join("log.jsonl")).unwrap();
    let best = log
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["best_reward"].as_f64().unwrap())
        .fold(f64::NEG_INFINITY, f64::max);

    let output = bin()
        .args(["eval", "--env", "pendulum-swingup", "--episodes", "10", "--seed", "900", "--checkpoint"])
        .arg(dir.join("checkpoints").join("final.json"))
        .output()
        .unwrap();
    assert!(output.status.success());
    let summary: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    let eval_max = summary["max_reward"].as_f64().unwrap();
    let eval_mean = summary["mean_reward"].as_f64().unwrap();
    assert!(
        eval_max >= best - 0.10 * best.abs(),
        "eval max {eval_max} vs training best {best}"
    );
    assert!(
        eval_mean >= best - 0.25 * best.abs(),
        "eval mean {eval_mean} vs training best {best}"
    );
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn single_color_fixed_partition_training_stays_in_its_measured_band() {
    // With M = 1 every action dimension sees the same scalar functional of
    // the observation, so goal-dependent 2-D control is not representable;
    // the run is equivalent to vanilla ES on a 1+bias-parameter policy and
    // lands in the measured band rather than near the well-trained policies.
    let dir = tmp_dir("m1");
    let status = bin()
        .args([
            "train", "--env", "point-reacher", "--arch", "L", "--partitions", "1",
            "--mode", "fixed-partition", "--iters", "200", "--workers", "64",
            "--threads", "2", "--seed", "1", "--progress", "0", "--out",
        ])
        .arg(&dir)
        .status()
        .unwrap();
    assert!(status.success());
    let log = std::fs::read_to_string(dir.join("log.jsonl")).unwrap();
    let best_mean = log
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["mean_reward"].as_f64().unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(
        (-150.0..=-20.0).contains(&best_mean),
        "M=1 best iteration mean {best_mean} outside the measured band"
    );
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn remote_workers_reproduce_the_in_process_run() {
    use std::io::{BufRead, BufReader};

    let local = tmp_dir("remote-local");
    train_tiny(&local, 21, &[]);

    let remote = tmp_dir("remote-tcp");
    let mut coordinator = bin()
        .args([
            "train", "--env", "point-reacher", "--arch", "L", "--partitions", "4",
            "--mode", "enas", "--iters", "6", "--workers", "6", "--controller-period", "3",
            "--checkpoint-every", "3", "--progress", "0", "--seed", "21",
            "--listen", "127.0.0.1:0", "--min-workers", "2", "--out",
        ])
        .arg(&remote)
        .stderr(std::process::Stdio::piped())
        .spawn()
        .unwrap();

    // The coordinator announces its ephemeral port on stderr.
    let mut stderr = BufReader::new(coordinator.stderr.take().unwrap());
    let mut line = String::new();
    let addr = loop {
        line.clear();
        assert!(stderr.read_line(&mut line).unwrap() > 0, "no listen line");
        if let Some(rest) = line.strip_prefix("listening on ") {
            break rest.split_whitespace().next().unwrap().to_string();
        }
    };

    let workers: Vec<_> = (0..2)
        .map(|_| {
            bin()
                .args(["worker", "--max-reconnects", "10", "--connect", &addr])
                .spawn()
                .unwrap()
        })
        .collect();
    assert!(coordinator.wait().unwrap().success());
    for mut worker in workers {
        assert!(worker.wait().unwrap().success());
    }

    let local_log = std::fs::read(local.join("log.jsonl")).unwrap();
    let remote_log = std::fs::read(remote.join("log.jsonl")).unwrap();
    assert_eq!(local_log, remote_log);
    std::fs::remove_dir_all(&local).ok();
    std::fs::remove_dir_all(&remote).ok();
}

#[test]
fn cartpole_training_reaches_the_full_horizon() {
    // Positive-reward path through the whole pipeline: cartpole balancing is
    // easy enough that a short run should hold the pole for all 500 steps.
    let dir = tmp_dir("cartpole");
    let status = bin()
        .args([
            "train", "--env", "cartpole-continuous", "--arch", "L", "--partitions", "4",
            "--mode", "enas", "--iters", "40", "--workers", "32", "--threads", "2",
            "--controller-period", "5", "--seed", "2", "--progress", "0", "--out",
        ])
        .arg(&dir)
        .status()
        .unwrap();
    assert!(status.success());
    let log = std::fs::read_to_string(dir.join("log.jsonl")).unwrap();
    let best = log
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["best_reward"].as_f64().unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(best, 500.0, "cartpole never survived the horizon");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn envs_lists_specs_as_json() {
    let output = bin().arg("envs").output().unwrap();
    assert!(output.status.success());
    let specs: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    let names: Vec<&str> = specs
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["name"].as_str().unwrap())
        .collect();
    assert_eq!(
        names,
        vec!["pendulum-swingup", "cartpole-continuous", "point-reacher"]
    );
}

#[test]
fn config_file_fields_are_overridden_by_flags() {
    let dir = tmp_dir("cfg");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg_path = dir.join("base.json");
    let base = serde_json::json!({
        "env": "point-reacher",
        "arch": "L",
        "layer_dims": [],
        "partitions": 4,
        "workers": 6,
        "rollouts_per_partition": 1,
        "controller_period": 3,
        "mode": "enas",
        "iterations": 2,
        "seed": 1,
        "es": {"sigma": 0.1, "step_size": 0.01, "num_perturbations": 6, "perturb_biases": true},
        "controller": {
            "embed_dim": 4, "hidden_dim": 8, "learning_rate": 0.001,
            "entropy_weight": 0.3, "critic_decay": 0.99, "temperature": 1.0,
            "optimizer": "adam"
        },
        "fixed_assignment": null,
        "checkpoint_every": 50,
        "task_timeout_secs": 60
    });
    std::fs::write(&cfg_path, base.to_string()).unwrap();
    let out = dir.join("run");
    let status = bin()
        .args(["train", "--progress", "0", "--iters", "3", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let effective: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(effective["iterations"], 3); // flag wins
    assert_eq!(effective["partitions"], 4); // file value preserved
    std::fs::remove_dir_all(&dir).ok();
}
