//! One function per verb.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Once;

use mars_core::checks::{check_gradients, NetworkId};
use mars_core::config::ExperimentConfig;
use mars_core::rollout::EpisodeSpec;
use mars_core::teams::TeamPool;
use mars_core::trainer::{MetricsRow, Observer, Trainer, TrainerState};

use crate::checkpoint::{self, CHECKPOINT};
use crate::cli::{Command, Common};
use crate::config_io::{self, RESOLVED_CONFIG};
use crate::edge_list::to_edge_list;
use crate::error::{config_error, RunError, RunResult};
use crate::fsutil::{ensure_dir, write_atomic};
use crate::metrics::{sweep_csv, MetricsWriter, METRICS, SWEEP};
use crate::pool_io;

pub const GRADCHECK: &str = "gradcheck.csv";
pub const EVAL: &str = "eval.json";
pub const SKELETONS: &str = "skeletons";

static STOP: AtomicBool = AtomicBool::new(false);
static HANDLER: Once = Once::new();

/// Routes SIGINT/SIGTERM to a flag polled between training iterations.
fn install_stop_handler() {
    HANDLER.call_once(|| {
        if let Err(e) = ctrlc::set_handler(|| STOP.store(true, Ordering::SeqCst)) {
            eprintln!("warning: no signal handler installed: {e}");
        }
    });
}

pub fn dispatch(command: &Command) -> RunResult<()> {
    match command {
        Command::PretrainPool { common } => pretrain_pool(common),
        Command::Train { common, resume, dump_skeletons } => train(common, resume.as_deref(), *dump_skeletons),
        Command::Eval { common, checkpoint, groups, episodes } => eval(common, checkpoint, *groups, *episodes),
        Command::Sweep { common, checkpoint, groups, episodes } => sweep(common, checkpoint, groups.as_deref(), *episodes),
        Command::GradCheck { common, networks, trials, tolerance } => grad_check(common, networks, *trials, *tolerance),
        Command::ValidateConfig { common } => {
            let cfg = resolve(common)?;
            prepare_out(common, &cfg)?;
            eprintln!("config ok; resolved config written to {}", common.out.join(RESOLVED_CONFIG).display());
            Ok(())
        }
    }
}

fn resolve(common: &Common) -> RunResult<ExperimentConfig> {
    config_io::resolve(common.config.as_deref(), &common.overrides, common.seed)
}

/// Creates the output directory and echoes the resolved config into it.
fn prepare_out(common: &Common, cfg: &ExperimentConfig) -> RunResult<()> {
    ensure_dir(&common.out)?;
    write_atomic(&common.out.join(RESOLVED_CONFIG), config_io::to_json(cfg).as_bytes())
}

fn pretrain_pool(common: &Common) -> RunResult<()> {
    let cfg = resolve(common)?;
    prepare_out(common, &cfg)?;
    let dir = &common.out;
    let total = cfg.pool.families.len() * (cfg.pool.train_seeds.len() + cfg.pool.eval_seeds.len());
    let mut written = Vec::new();
    let mut failure = None;
    let pool = TeamPool::pretrain_with(&cfg.pool, &cfg.env, |i, entry| {
        if failure.is_some() {
            return;
        }
        match pool_io::save_team(dir, i, entry) {
            Ok(m) => {
                eprintln!(
                    "[pool] {}/{total} {} seed {} ({:?}) checksum {}",
                    i + 1,
                    m.family.name(),
                    m.seed,
                    m.split,
                    m.checksum
                );
                written.push(m);
            }
            Err(e) => failure = Some(e),
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    debug_assert_eq!(written.len(), pool.entries.len());
    pool_io::save_manifest(dir, written)?;
    eprintln!("[pool] {} teams written to {}", pool.entries.len(), dir.display());
    Ok(())
}

struct RunObserver {
    metrics: MetricsWriter,
    checkpoint: PathBuf,
    config: ExperimentConfig,
    skeletons: Option<PathBuf>,
    stopped: bool,
}

impl Observer for RunObserver {
    type Error = RunError;

    fn metrics(&mut self, row: &MetricsRow) -> RunResult<()> {
        eprintln!(
            "[train] steps {} iter {} test return {:.3} ± {:.3} capture {:.2}",
            row.env_steps, row.iteration, row.eval.return_mean, row.eval.return_std, row.eval.capture_rate
        );
        self.metrics.write(row)
    }

    fn checkpoint(&mut self, state: &TrainerState) -> RunResult<()> {
        checkpoint::save(&self.checkpoint, &self.config, state)
    }

    fn iteration(&mut self, _state: &TrainerState, specs: &[EpisodeSpec]) -> RunResult<()> {
        if let Some(dir) = &self.skeletons {
            for s in specs {
                write_atomic(&dir.join(format!("episode-{:08}.txt", s.id)), to_edge_list(&s.graph).as_bytes())?;
            }
        }
        Ok(())
    }

    fn should_stop(&mut self) -> bool {
        self.stopped = STOP.load(Ordering::SeqCst);
        self.stopped
    }
}

fn train(common: &Common, resume: Option<&Path>, dump_skeletons: bool) -> RunResult<()> {
    let cfg = resolve(common)?;
    let resumed = match resume {
        Some(path) => {
            let ck = checkpoint::load(path)?;
            if ck.config_hash != config_io::config_hash(&cfg) {
                return Err(config_error(format!(
                    "--resume: {} was written with a different config (hash {})",
                    path.display(),
                    ck.config_hash
                )));
            }
            Some(ck.state)
        }
        None => None,
    };
    let pool = pool_io::load_pool(Path::new(&cfg.teams.pool_dir))?;
    prepare_out(common, &cfg)?;
    let checksums = pool.checksums();
    let mut trainer = match resumed {
        Some(state) => Trainer::resume(cfg.clone(), &pool, state)?,
        None => Trainer::new(cfg.clone(), &pool)?,
    };
    let skeletons = if dump_skeletons && trainer.features().rfm {
        let dir = common.out.join(SKELETONS);
        ensure_dir(&dir)?;
        Some(dir)
    } else {
        None
    };
    let metrics_path = common.out.join(METRICS);
    if resume.is_none() {
        // a fresh run replaces any earlier metrics in the same directory
        write_atomic(&metrics_path, b"")?;
    }
    let mut obs = RunObserver {
        metrics: MetricsWriter::open(&metrics_path, trainer.features())?,
        checkpoint: common.out.join(CHECKPOINT),
        config: cfg.clone(),
        skeletons,
        stopped: false,
    };
    install_stop_handler();
    eprintln!(
        "[train] {} seed {} n {} m {} for {} env steps",
        cfg.variant.name(),
        cfg.seed,
        cfg.n_total(),
        cfg.m_groups,
        cfg.train.total_env_steps
    );
    let outcome = trainer.run(&mut obs);
    if let Err(RunError::Core(mars_core::Error::Numerical(msg))) = &outcome {
        // keep the last finite state for inspection
        checkpoint::save(&obs.checkpoint, &cfg, &trainer.state)?;
        eprintln!("[train] numerical failure; last finite state saved to {}", obs.checkpoint.display());
        return Err(RunError::Core(mars_core::Error::Numerical(msg.clone())));
    }
    outcome?;
    if pool.checksums() != checksums {
        return Err(RunError::Core(mars_core::Error::Usage("uncontrolled team parameters changed".into())));
    }
    if obs.stopped {
        return Err(RunError::Interrupted(obs.checkpoint));
    }
    eprintln!("[train] done; metrics in {}", metrics_path.display());
    Ok(())
}

/// Loads a checkpoint and the config it is evaluated under: `--config` when
/// given, else the checkpoint's own, then overrides.
fn load_for_eval(common: &Common, path: &Path) -> RunResult<(ExperimentConfig, TrainerState)> {
    let ck = checkpoint::load(path)?;
    let base = match &common.config {
        Some(p) => config_io::read_config(p)?,
        None => ck.config.clone(),
    };
    let cfg = config_io::resolve_from(base, &common.overrides, common.seed)?;
    if cfg.variant != ck.config.variant || cfg.env != ck.config.env {
        return Err(config_error(format!(
            "--checkpoint: {} was trained as {} on a different env config",
            path.display(),
            ck.config.variant.name()
        )));
    }
    Ok((cfg, ck.state))
}

fn eval(common: &Common, path: &Path, groups: Option<usize>, episodes: Option<usize>) -> RunResult<()> {
    let (cfg, state) = load_for_eval(common, path)?;
    let pool = pool_io::load_pool(Path::new(&cfg.teams.pool_dir))?;
    prepare_out(common, &cfg)?;
    let trainer = Trainer::resume(cfg.clone(), &pool, state)?;
    let before = trainer.state.params.checksum();
    let summary = trainer.evaluate(groups.unwrap_or(cfg.m_groups), episodes.unwrap_or(cfg.eval.episodes))?;
    debug_assert_eq!(before, trainer.state.params.checksum());
    let mut json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    json.push('\n');
    write_atomic(&common.out.join(EVAL), json.as_bytes())?;
    println!(
        "m {} episodes {} test return {} ± {} capture rate {}",
        summary.m_groups, summary.episodes, summary.return_mean, summary.return_std, summary.capture_rate
    );
    Ok(())
}

fn sweep(common: &Common, path: &Path, groups: Option<&[usize]>, episodes: Option<usize>) -> RunResult<()> {
    let (cfg, state) = load_for_eval(common, path)?;
    let pool = pool_io::load_pool(Path::new(&cfg.teams.pool_dir))?;
    prepare_out(common, &cfg)?;
    let trainer = Trainer::resume(cfg.clone(), &pool, state)?;
    let groups = groups.map(<[usize]>::to_vec).unwrap_or_else(|| cfg.eval.sweep_groups.clone());
    let (rows, warnings) = trainer.sweep_groups(&groups, episodes.unwrap_or(cfg.eval.episodes))?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let csv = sweep_csv(&rows);
    write_atomic(&common.out.join(SWEEP), csv.as_bytes())?;
    print!("{csv}");
    Ok(())
}

fn grad_check(common: &Common, names: &[String], trials: usize, tolerance: f64) -> RunResult<()> {
    let cfg = resolve(common)?;
    let ids: Vec<NetworkId> = if names.is_empty() {
        NetworkId::ALL.to_vec()
    } else {
        names.iter().map(|n| NetworkId::parse(n)).collect::<Result<_, _>>()?
    };
    if trials == 0 {
        return Err(RunError::Cli("--trials must be at least 1".into()));
    }
    prepare_out(common, &cfg)?;
    let mut csv = String::from("network,parameter,max_rel_error\n");
    let mut failed = Vec::new();
    for id in ids {
        let report = check_gradients(id, trials, cfg.seed)?;
        for (param, err) in &report.max_rel_error {
            csv.push_str(&format!("{},{param},{err:e}\n", id.name()));
        }
        let worst = report.worst();
        let ok = worst < tolerance;
        eprintln!("[grad-check] {:<16} {} trials, max rel error {worst:.3e} {}", id.name(), report.trials, if ok { "ok" } else { "FAIL" });
        if !ok {
            failed.push(format!("{} ({worst:.3e})", id.name()));
        }
    }
    write_atomic(&common.out.join(GRADCHECK), csv.as_bytes())?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(RunError::GradCheck(format!("tolerance {tolerance:e} exceeded by {}", failed.join(", "))))
    }
}
