//! Command-line grammar.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "mars", version, about = "Multi-party ad hoc teamwork trainer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every verb.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON config; defaults are used for every key it omits.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set ppo.lr=0.001`. Repeatable.
    #[arg(long = "set", value_name = "KEY.PATH=VALUE")]
    pub overrides: Vec<String>,
    /// Master seed; applied after every `--set`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory. Nothing is written outside it.
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pretrain the frozen uncontrolled teams into the output directory.
    PretrainPool {
        #[command(flatten)]
        common: Common,
    },
    /// Train the configured variant against the pool at `teams.pool_dir`.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint written with the same config.
        #[arg(long, value_name = "CHECKPOINT")]
        resume: Option<PathBuf>,
        /// Write every training episode's interaction graph as an edge list.
        #[arg(long)]
        dump_skeletons: bool,
    },
    /// Evaluate a checkpoint on held-out episodes.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Number of uncontrolled groups; defaults to `m_groups`.
        #[arg(long)]
        groups: Option<usize>,
        /// Defaults to `eval.episodes`.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Evaluate a checkpoint at several numbers of uncontrolled groups.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Comma-separated group counts; defaults to `eval.sweep_groups`.
        #[arg(long, value_delimiter = ',')]
        groups: Option<Vec<usize>>,
        /// Defaults to `eval.episodes`.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Compare reverse-mode gradients with central finite differences.
    GradCheck {
        #[command(flatten)]
        common: Common,
        /// Network to check; repeatable. Defaults to all of them.
        #[arg(long = "network", value_name = "NAME")]
        networks: Vec<String>,
        /// Random initialisations per network.
        #[arg(long, default_value_t = 5)]
        trials: usize,
        /// Largest accepted relative error.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Resolve and validate a config, echoing it to the output directory.
    ValidateConfig {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::PretrainPool { common }
            | Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::Sweep { common, .. }
            | Command::GradCheck { common, .. }
            | Command::ValidateConfig { common } => common,
        }
    }
}
