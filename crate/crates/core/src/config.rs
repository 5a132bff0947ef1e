//! Experiment configuration.
//!
//! Every section rejects unknown keys and fills missing ones with defaults,
//! so a resolved config written back out reproduces the run exactly. The
//! number of agents in an episode is `env.n_agents`.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::agent_model::AgentModelConfig;
use crate::env::EnvConfig;
use crate::error::{config_err, Result};
use crate::policy::{Features, PpoConfig};
use crate::rfm::RfmConfig;
use crate::teams::{ActMode, PoolConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Variant {
    /// Agent model, relational model and sparse skeleton.
    Mars,
    /// As `Mars` on the complete graph.
    MarsNoSkeleton,
    /// Agent model only.
    PoamLike,
    /// Plain independent PPO.
    IppoMaht,
    /// The best self-play pool team in the controlled seats, no training.
    NaiveMarl,
}

impl Variant {
    pub const ALL: [Variant; 5] =
        [Variant::Mars, Variant::MarsNoSkeleton, Variant::PoamLike, Variant::IppoMaht, Variant::NaiveMarl];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Mars => "MARS",
            Variant::MarsNoSkeleton => "MARS_NO_SKELETON",
            Variant::PoamLike => "POAM_LIKE",
            Variant::IppoMaht => "IPPO_MAHT",
            Variant::NaiveMarl => "NAIVE_MARL",
        }
    }

    pub fn features(self) -> Features {
        let (agent_model, rfm, sparse_skeleton) = match self {
            Variant::Mars => (true, true, true),
            Variant::MarsNoSkeleton => (true, true, false),
            Variant::PoamLike => (true, false, false),
            Variant::IppoMaht | Variant::NaiveMarl => (false, false, false),
        };
        Features { agent_model, rfm, sparse_skeleton }
    }

    pub fn trains(self) -> bool {
        self != Variant::NaiveMarl
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkeletonConfig {
    /// Representatives drawn per group for every pair of groups.
    pub representatives: usize,
}

impl Default for SkeletonConfig {
    fn default() -> Self {
        Self { representatives: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeamsConfig {
    /// Pool directory, relative to the working directory.
    pub pool_dir: alloc::string::String,
    pub act_mode: ActMode,
    /// Self-play episodes per pool entry when choosing the naive baseline.
    pub naive_selection_episodes: usize,
}

impl Default for TeamsConfig {
    fn default() -> Self {
        Self { pool_dir: "pool".into(), act_mode: ActMode::Greedy, naive_selection_episodes: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Joint environment steps.
    pub total_env_steps: u64,
    /// Episodes collected per PPO iteration.
    pub episodes_per_iteration: usize,
    pub eval_interval: u64,
    /// Joint steps between checkpoints; 0 writes only the final one.
    pub checkpoint_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { total_env_steps: 1_000_000, episodes_per_iteration: 16, eval_interval: 50_000, checkpoint_interval: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes: usize,
    /// Seed of the held-out evaluation episodes, independent of the master
    /// seed so every run is scored on the same episodes.
    pub seed: u64,
    /// Group counts visited by the sweep.
    pub sweep_groups: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { episodes: 64, seed: 12345, sweep_groups: vec![1, 2, 3, 4, 5] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub variant: Variant,
    pub env: EnvConfig,
    /// Uncontrolled groups per episode.
    pub m_groups: usize,
    pub teams: TeamsConfig,
    /// What `pretrain-pool` builds.
    pub pool: PoolConfig,
    pub agent_model: AgentModelConfig,
    pub rfm: RfmConfig,
    pub skeleton: SkeletonConfig,
    pub ppo: PpoConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 1,
            variant: Variant::Mars,
            env: EnvConfig { n_agents: 6, ..EnvConfig::default() },
            m_groups: 2,
            teams: TeamsConfig::default(),
            pool: PoolConfig::default(),
            agent_model: AgentModelConfig::default(),
            rfm: RfmConfig::default(),
            skeleton: SkeletonConfig::default(),
            ppo: PpoConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn n_total(&self) -> usize {
        self.env.n_agents
    }

    /// Schema and cross-field checks.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_err!(
                "schema_version: expected {SCHEMA_VERSION}, found {}",
                self.schema_version
            ));
        }
        self.env.validate()?;
        if self.n_total() < self.m_groups + 1 {
            return Err(config_err!(
                "m_groups: {} groups leave no controlled agent among env.n_agents = {}",
                self.m_groups,
                self.n_total()
            ));
        }
        if self.skeleton.representatives < 1 {
            return Err(config_err!("skeleton.representatives must be at least 1"));
        }
        self.pool.validate()?;
        self.ppo.validate()?;
        let f = self.variant.features();
        if f.rfm {
            self.rfm.validate()?;
            if f.agent_model && self.agent_model.embed_dim != self.rfm.node_dim {
                return Err(config_err!(
                    "agent_model.embed_dim ({}) must equal rfm.node_dim ({})",
                    self.agent_model.embed_dim,
                    self.rfm.node_dim
                ));
            }
        }
        if f.agent_model && (self.agent_model.hidden_dim == 0 || self.agent_model.embed_dim == 0) {
            return Err(config_err!("agent_model dimensions must be positive"));
        }
        if self.train.episodes_per_iteration < 1 {
            return Err(config_err!("train.episodes_per_iteration must be at least 1"));
        }
        if self.train.eval_interval < 1 {
            return Err(config_err!("train.eval_interval must be at least 1"));
        }
        if self.eval.episodes < 1 {
            return Err(config_err!("eval.episodes must be at least 1"));
        }
        if let ActMode::Softmax { temperature } = self.teams.act_mode {
            if !(temperature > 0.0) {
                return Err(config_err!("teams.act_mode.temperature must be positive"));
            }
        }
        Ok(())
    }
}
