//! Single-file checkpoints.
//!
//! A checkpoint holds the resolved config, its hash and the full trainer
//! state: every parameter, the optimizer moments and step count, and the
//! iteration and episode counters. All random streams are derived from the
//! master seed and those counters, so they are the complete RNG state.

use std::path::Path;

use mars_core::config::ExperimentConfig;
use mars_core::trainer::TrainerState;
use serde::{Deserialize, Serialize};

use crate::config_io::config_hash;
use crate::error::{config_error, RunResult};
use crate::fsutil::{check_tensors, read_json, write_json};

pub const CHECKPOINT: &str = "checkpoint.json";
pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub state: TrainerState,
}

impl Checkpoint {
    pub fn new(config: &ExperimentConfig, state: &TrainerState) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT,
            config_hash: config_hash(config),
            config: config.clone(),
            state: state.clone(),
        }
    }
}

pub fn save(path: &Path, config: &ExperimentConfig, state: &TrainerState) -> RunResult<()> {
    write_json(path, &Checkpoint::new(config, state))
}

/// Loads and checks format, hash and tensor shapes.
pub fn load(path: &Path) -> RunResult<Checkpoint> {
    let ck: Checkpoint = read_json(path)?;
    if ck.format_version != CHECKPOINT_FORMAT {
        return Err(config_error(format!("{}: format_version {} is not supported", path.display(), ck.format_version)));
    }
    if config_hash(&ck.config) != ck.config_hash {
        return Err(config_error(format!("{}: config_hash does not match the stored config", path.display())));
    }
    check_tensors(&ck.state.params, path)?;
    Ok(ck)
}
