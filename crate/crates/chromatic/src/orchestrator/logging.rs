//! Run-directory layout and writers.
//!
//! A run directory contains:
//!   config.json        the effective configuration, written at start
//!   log.jsonl          one IterationRecord per line (deterministic fields)
//!   rewards.csv        iteration, mean, max for plotting
//!   timings.csv        iteration, wall-clock ms (kept out of log.jsonl so
//!                      logs are byte-identical across reruns and pool modes)
//!   partitions.jsonl   one PhaseSnapshot per controller phase
//!   checkpoints/       versioned JSON checkpoints
//!   final_policy.json

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::analysis::PhaseSnapshot;
use crate::error::{Error, Result};
use crate::orchestrator::IterationRecord;
use crate::topology::PolicySpec;

pub struct RunDir {
    root: PathBuf,
    log: File,
    rewards: File,
    timings: File,
    partitions: File,
}

impl RunDir {
    pub fn create(root: &Path, effective_config: &serde_json::Value) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        std::fs::create_dir_all(root.join("checkpoints"))?;
        std::fs::write(
            root.join("config.json"),
            serde_json::to_string_pretty(effective_config)?,
        )?;
        let mut rewards = File::create(root.join("rewards.csv"))?;
        writeln!(rewards, "iteration,mean_reward,max_reward")?;
        let mut timings = File::create(root.join("timings.csv"))?;
        writeln!(timings, "iteration,wall_clock_ms")?;
        Ok(Self {
            root: root.to_path_buf(),
            log: File::create(root.join("log.jsonl"))?,
            rewards,
            timings,
            partitions: File::create(root.join("partitions.jsonl"))?,
        })
    }

    /// Reopens an existing run directory in append mode for resumption.
    pub fn open_for_resume(root: &Path) -> Result<Self> {
        for required in ["config.json", "log.jsonl", "rewards.csv", "timings.csv"] {
            if !root.join(required).exists() {
                return Err(Error::Config(format!(
                    "cannot resume: {} missing in {}",
                    required,
                    root.display()
                )));
            }
        }
        let append = |name: &str| OpenOptions::new().append(true).open(root.join(name));
        Ok(Self {
            root: root.to_path_buf(),
            log: append("log.jsonl")?,
            rewards: append("rewards.csv")?,
            timings: append("timings.csv")?,
            partitions: append("partitions.jsonl")?,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn append_record(&mut self, record: &IterationRecord) -> Result<()> {
        writeln!(self.log, "{}", serde_json::to_string(record)?)?;
        writeln!(
            self.rewards,
            "{},{},{}",
            record.iteration, record.mean_reward, record.max_reward
        )?;
        writeln!(self.timings, "{},{}", record.iteration, record.wall_clock_ms)?;
        Ok(())
    }

    pub fn append_phase(&mut self, snapshot: &PhaseSnapshot) -> Result<()> {
        writeln!(self.partitions, "{}", serde_json::to_string(snapshot)?)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.log.flush()?;
        self.rewards.flush()?;
        self.timings.flush()?;
        self.partitions.flush()?;
        Ok(())
    }

    pub fn checkpoint_path(&self, iteration: usize) -> PathBuf {
        self.root
            .join("checkpoints")
            .join(format!("ckpt_{iteration:06}.json"))
    }

    pub fn final_checkpoint_path(&self) -> PathBuf {
        self.root.join("checkpoints").join("final.json")
    }

    pub fn write_final_policy(&self, spec: &PolicySpec) -> Result<()> {
        std::fs::write(
            self.root.join("final_policy.json"),
            serde_json::to_string_pretty(spec)?,
        )?;
        Ok(())
    }

    /// Post-run manifest check: every run directory must contain the
    /// effective config, the JSONL log, at least one checkpoint, and the
    /// final policy.
    pub fn manifest_check(&self) -> Result<()> {
        let mut missing = Vec::new();
        for required in ["config.json", "log.jsonl", "final_policy.json"] {
            if !self.root.join(required).exists() {
                missing.push(required.to_string());
            }
        }
        let has_checkpoint = std::fs::read_dir(self.root.join("checkpoints"))
            .map(|mut d| d.any(|e| e.is_ok()))
            .unwrap_or(false);
        if !has_checkpoint {
            missing.push("checkpoints/*".into());
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "run directory {} incomplete: missing {}",
                self.root.display(),
                missing.join(", ")
            )))
        }
    }
}
