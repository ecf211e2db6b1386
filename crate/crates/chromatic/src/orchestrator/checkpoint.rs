//! Versioned JSON checkpoints with atomic writes (temp file + rename).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::ControllerState;
use crate::error::{Error, Result};
use crate::es::Normalizer;
use crate::orchestrator::{BestPartition, PopulationMember, TrainConfig};
use crate::topology::{Partitioning, SharedWeightPool};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// Cursor state of the run's derived-seed randomness. All stochastic choices
/// are functions of (master seed, counters), so these two fields plus the
/// iteration number reproduce the stream exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngCursor {
    pub master_seed: u64,
    pub next_member_seq: u64,
}

/// Full training state. `load(save(x))` reproduces `x` bit-exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub iteration: usize,
    pub weights_version: u64,
    pub pool: SharedWeightPool,
    pub controller: ControllerState,
    pub normalizer: Normalizer,
    pub rng: RngCursor,
    pub population: Vec<PopulationMember>,
    pub best_reward: Option<f64>,
    pub best_partition: Option<BestPartition>,
    pub config: TrainConfig,
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    let body = serde_json::to_string(checkpoint)?;
    std::fs::write(&tmp, body)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let body = std::fs::read_to_string(path)?;
    let checkpoint: Checkpoint = serde_json::from_str(&body)
        .map_err(|e| Error::CorruptCheckpoint(format!("{}: {e}", path.display())))?;
    if checkpoint.schema_version != CHECKPOINT_SCHEMA_VERSION {
        return Err(Error::CheckpointVersion {
            expected: CHECKPOINT_SCHEMA_VERSION,
            found: checkpoint.schema_version,
        });
    }
    Ok(checkpoint)
}

/// The `k` partitionings with the highest max reward, ties broken by earlier
/// sample time. Returns `(partitionings, truncated)` where `truncated` is
/// true when fewer than `k` members were available.
pub fn transfer_top_k(checkpoint: &Checkpoint, k: usize) -> (Vec<Partitioning>, bool) {
    let mut members: Vec<&PopulationMember> = checkpoint.population.iter().collect();
    members.sort_by(|a, b| {
        let ra = a.score.max_reward.unwrap_or(f64::NEG_INFINITY);
        let rb = b.score.max_reward.unwrap_or(f64::NEG_INFINITY);
        rb.partial_cmp(&ra)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.seq.cmp(&b.seq))
    });
    let truncated = k > members.len();
    (
        members
            .into_iter()
            .take(k)
            .map(|m| m.partitioning.clone())
            .collect(),
        truncated,
    )
}
