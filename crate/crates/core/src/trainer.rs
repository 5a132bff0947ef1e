//! Training loop, evaluation and the group-count sweep.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Variant};
use crate::error::{config_err, usage_err, Error, Result};
use crate::numerics::optim::Adam;
use crate::numerics::ParameterSet;
use crate::policy::{update, Features, Networks, UpdateStats};
use crate::rng::{self, Stream};
use crate::rollout::{run_episodes, Controller, EpisodeOutcome, EpisodeSpec};
use crate::teams::{Split, TeamComposition, TeamPool};

/// Everything needed to continue a run bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub iteration: u64,
    pub env_steps: u64,
    /// Episode ids handed out so far; every random stream is keyed by them.
    pub episodes: u64,
    pub next_eval: u64,
    pub next_checkpoint: u64,
    /// Env steps of the last metrics row, if any.
    pub last_row_steps: Option<u64>,
    pub params: ParameterSet,
    pub optimizer: Adam,
    /// Pool entry playing the controlled seats of the naive baseline.
    pub naive_team: Option<usize>,
    pub last_stats: UpdateStats,
    pub last_train: TrainSummary,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub return_mean: f64,
    pub edges_min: usize,
    pub edges_max: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub m_groups: usize,
    pub episodes: usize,
    pub return_mean: f64,
    pub return_std: f64,
    /// Fraction of episodes with at least one capture.
    pub capture_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub env_steps: u64,
    pub iteration: u64,
    pub eval: EvalSummary,
    pub train: TrainSummary,
    pub stats: UpdateStats,
}

impl MetricsRow {
    /// Column names for a run with `features`.
    pub fn header(features: Features) -> Vec<&'static str> {
        let mut h = alloc::vec![
            "env_steps",
            "iteration",
            "test_return_mean",
            "test_return_std",
            "capture_rate",
            "train_return_mean",
            "actor_loss",
            "critic_loss",
            "entropy",
            "grad_norm",
        ];
        if features.agent_model {
            h.extend(["ed_loss", "ed_reconstruction", "ed_action"]);
        }
        if features.rfm {
            h.extend(["edges_min", "edges_max"]);
        }
        h
    }

    /// Cell values in [`MetricsRow::header`] order.
    pub fn cells(&self, features: Features) -> Vec<String> {
        let f = |x: f64| format!("{x}");
        let s = &self.stats;
        let mut c = alloc::vec![
            self.env_steps.to_string(),
            self.iteration.to_string(),
            f(self.eval.return_mean),
            f(self.eval.return_std),
            f(self.eval.capture_rate),
            f(self.train.return_mean),
            f(s.actor_loss),
            f(s.critic_loss),
            f(s.entropy),
            f(s.grad_norm),
        ];
        if features.agent_model {
            c.extend([f(s.ed_loss), f(s.ed_reconstruction), f(s.ed_action)]);
        }
        if features.rfm {
            c.extend([self.train.edges_min.to_string(), self.train.edges_max.to_string()]);
        }
        c
    }
}

/// Receives rows and checkpoints as the run progresses.
pub trait Observer {
    type Error: From<Error>;
    fn metrics(&mut self, row: &MetricsRow) -> core::result::Result<(), Self::Error>;
    fn checkpoint(&mut self, state: &TrainerState) -> core::result::Result<(), Self::Error>;
    /// Called after every iteration.
    fn iteration(&mut self, _state: &TrainerState, _specs: &[EpisodeSpec]) -> core::result::Result<(), Self::Error> {
        Ok(())
    }
    /// Polled between iterations; `true` checkpoints and returns.
    fn should_stop(&mut self) -> bool {
        false
    }
}

pub struct Trainer<'a> {
    pub config: ExperimentConfig,
    pub pool: &'a TeamPool,
    pub nets: Networks,
    pub state: TrainerState,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}

impl<'a> Trainer<'a> {
    pub fn new(config: ExperimentConfig, pool: &'a TeamPool) -> Result<Self> {
        config.validate()?;
        let nets = Self::networks(&config)?;
        let mut params = ParameterSet::new(rng::child_seed(config.seed, Stream::Init, 0));
        nets.init(&mut params)?;
        let mut t = Self {
            state: TrainerState {
                iteration: 0,
                env_steps: 0,
                episodes: 0,
                next_eval: 0,
                next_checkpoint: config.train.checkpoint_interval,
                last_row_steps: None,
                params,
                optimizer: config.ppo.optimizer(),
                naive_team: None,
                last_stats: UpdateStats::default(),
                last_train: TrainSummary::default(),
            },
            config,
            pool,
            nets,
        };
        t.check_pool()?;
        if t.config.variant == Variant::NaiveMarl {
            t.state.naive_team = Some(t.select_naive_team()?);
        }
        Ok(t)
    }

    /// Continues from a saved state; the config must describe the same
    /// networks.
    pub fn resume(config: ExperimentConfig, pool: &'a TeamPool, state: TrainerState) -> Result<Self> {
        config.validate()?;
        let nets = Self::networks(&config)?;
        let mut fresh = ParameterSet::new(0);
        nets.init(&mut fresh)?;
        let shapes = |p: &ParameterSet| p.iter().map(|(k, t)| (k.clone(), t.shape().to_vec())).collect::<Vec<_>>();
        if shapes(&fresh) != shapes(&state.params) {
            return Err(config_err!("checkpoint parameters do not match the configured networks"));
        }
        let t = Self { config, pool, nets, state };
        t.check_pool()?;
        Ok(t)
    }

    fn networks(config: &ExperimentConfig) -> Result<Networks> {
        Networks::new(
            config.variant.features(),
            config.env.obs_dim(),
            config.n_total(),
            &config.agent_model,
            &config.rfm,
            &config.ppo,
        )
    }

    fn check_pool(&self) -> Result<()> {
        let m = self.config.m_groups;
        let train = self.pool.split(Split::Train).len();
        if train < m.max(usize::from(self.config.variant == Variant::NaiveMarl)) {
            return Err(config_err!("team pool has {train} training entries, {m} groups requested"));
        }
        Ok(())
    }

    pub fn features(&self) -> Features {
        self.config.variant.features()
    }

    pub fn is_finished(&self) -> bool {
        !self.config.variant.trains() || self.state.env_steps >= self.config.train.total_env_steps
    }

    /// Episodes of the next iteration.
    pub fn plan_iteration(&self) -> Result<Vec<EpisodeSpec>> {
        let candidates = self.pool.split(Split::Train);
        (0..self.config.train.episodes_per_iteration as u64)
            .map(|k| {
                EpisodeSpec::plan(
                    self.config.seed,
                    self.state.episodes + k,
                    &candidates,
                    self.config.n_total(),
                    self.config.m_groups,
                    self.features(),
                    self.config.skeleton.representatives,
                )
            })
            .collect()
    }

    /// Collects one batch of episodes and runs the PPO update on it.
    pub fn iteration(&mut self) -> Result<Vec<EpisodeSpec>> {
        if !self.config.variant.trains() {
            return Err(usage_err!("{} does not train", self.config.variant.name()));
        }
        let specs = self.plan_iteration()?;
        let ppo = &self.config.ppo;
        let rollouts = run_episodes(
            &self.config.env,
            self.pool,
            self.config.teams.act_mode,
            Controller::Learned { nets: &self.nets, params: &self.state.params },
            &specs,
            true,
            (ppo.gamma, ppo.lambda),
        )?;
        let batch = rollouts.batch.ok_or_else(|| usage_err!("rollout produced no batch"))?;
        let mut params = self.state.params.clone();
        let mut opt = self.state.optimizer.clone();
        let mut mb_rng = rng::stream(self.config.seed, Stream::Minibatch, self.state.iteration);
        let stats = update(&self.nets, &mut params, &mut opt, &batch, ppo, &mut mb_rng)?;
        if !params.is_finite() {
            return Err(Error::Numerical(format!("parameters became non-finite at iteration {}", self.state.iteration)));
        }
        self.state.params = params;
        self.state.optimizer = opt;
        self.state.last_stats = stats;
        self.state.last_train = summarize_train(&rollouts.outcomes);
        self.state.iteration += 1;
        self.state.episodes += specs.len() as u64;
        self.state.env_steps += rollouts.outcomes.iter().map(|o| o.steps as u64).sum::<u64>();
        Ok(specs)
    }

    /// Greedy evaluation on `episodes` held-out episodes with `m_groups`
    /// uncontrolled groups drawn from the evaluation split of the pool.
    pub fn evaluate(&self, m_groups: usize, episodes: usize) -> Result<EvalSummary> {
        if episodes == 0 {
            return Err(usage_err!("evaluation with 0 episodes has no summary"));
        }
        let candidates = self.pool.split(Split::Eval);
        let n = self.config.n_total();
        let specs: Vec<EpisodeSpec> = (0..episodes as u64)
            .map(|id| {
                EpisodeSpec::plan(
                    self.config.eval.seed,
                    id,
                    &candidates,
                    n,
                    m_groups,
                    self.features(),
                    self.config.skeleton.representatives,
                )
            })
            .collect::<Result<_>>()?;
        let outcomes = self.run_eval(&specs)?;
        Ok(summarize_eval(m_groups, &outcomes))
    }

    fn run_eval(&self, specs: &[EpisodeSpec]) -> Result<Vec<EpisodeOutcome>> {
        let controller = match self.state.naive_team {
            Some(i) => Controller::Team(self.pool.policy(i)),
            None => Controller::Learned { nets: &self.nets, params: &self.state.params },
        };
        // bounded lock-step width keeps memory flat for large evaluations
        let mut out = Vec::with_capacity(specs.len());
        for chunk in specs.chunks(64) {
            let r = run_episodes(&self.config.env, self.pool, self.config.teams.act_mode, controller, chunk, false, (1.0, 1.0))?;
            out.extend(r.outcomes);
        }
        Ok(out)
    }

    /// The training-split entry with the best greedy self-play return when it
    /// fills every seat.
    fn select_naive_team(&self) -> Result<usize> {
        let n = self.config.n_total();
        let episodes = self.config.teams.naive_selection_episodes.max(1) as u64;
        let master = rng::child_seed(self.config.seed, Stream::Eval, 1);
        let mut best: Option<(usize, f64)> = None;
        for idx in self.pool.split(Split::Train) {
            let specs: Vec<EpisodeSpec> = (0..episodes)
                .map(|id| EpisodeSpec {
                    master,
                    id,
                    composition: TeamComposition::all_controlled(n),
                    graph: crate::skeleton::build_full_graph(n),
                })
                .collect();
            let r = run_episodes(
                &self.config.env,
                self.pool,
                self.config.teams.act_mode,
                Controller::Team(self.pool.policy(idx)),
                &specs,
                false,
                (1.0, 1.0),
            )?;
            let mean = r.outcomes.iter().map(|o| o.team_return).sum::<f64>() / episodes as f64;
            if best.map_or(true, |(_, b)| mean > b) {
                best = Some((idx, mean));
            }
        }
        best.map(|(i, _)| i).ok_or_else(|| config_err!("team pool has no training entries"))
    }

    fn metrics_row(&self) -> Result<MetricsRow> {
        Ok(MetricsRow {
            env_steps: self.state.env_steps,
            iteration: self.state.iteration,
            eval: self.evaluate(self.config.m_groups, self.config.eval.episodes)?,
            train: self.state.last_train,
            stats: self.state.last_stats,
        })
    }

    fn emit_row<O: Observer>(&mut self, obs: &mut O) -> core::result::Result<(), O::Error> {
        if self.state.last_row_steps == Some(self.state.env_steps) {
            return Ok(());
        }
        let row = self.metrics_row()?;
        obs.metrics(&row)?;
        self.state.last_row_steps = Some(self.state.env_steps);
        Ok(())
    }

    /// Trains until the step budget is spent, emitting a metrics row at every
    /// evaluation point (including step 0 and the end) and checkpoints at the
    /// configured interval and at the end.
    pub fn run<O: Observer>(&mut self, obs: &mut O) -> core::result::Result<(), O::Error> {
        let interval = self.config.train.eval_interval;
        if self.state.env_steps >= self.state.next_eval {
            self.emit_row(obs)?;
            while self.state.next_eval <= self.state.env_steps {
                self.state.next_eval += interval;
            }
        }
        while !self.is_finished() {
            if obs.should_stop() {
                obs.checkpoint(&self.state)?;
                return Ok(());
            }
            let specs = self.iteration()?;
            obs.iteration(&self.state, &specs)?;
            if self.state.env_steps >= self.state.next_eval {
                self.emit_row(obs)?;
                while self.state.next_eval <= self.state.env_steps {
                    self.state.next_eval += interval;
                }
            }
            let ck = self.config.train.checkpoint_interval;
            if ck > 0 && self.state.env_steps >= self.state.next_checkpoint {
                obs.checkpoint(&self.state)?;
                while self.state.next_checkpoint <= self.state.env_steps {
                    self.state.next_checkpoint += ck;
                }
            }
        }
        self.emit_row(obs)?;
        obs.checkpoint(&self.state)?;
        Ok(())
    }

    /// Evaluates at every feasible group count; infeasible counts are skipped
    /// and reported.
    pub fn sweep_groups(&self, groups: &[usize], episodes: usize) -> Result<(Vec<EvalSummary>, Vec<String>)> {
        let n = self.config.n_total();
        let eval_entries = self.pool.split(Split::Eval).len();
        let mut rows = Vec::new();
        let mut warnings = Vec::new();
        for &m in groups {
            if n < m + 1 {
                warnings.push(format!("skipping m = {m}: {n} agents leave no controlled seat"));
                continue;
            }
            if eval_entries < m {
                warnings.push(format!("skipping m = {m}: the pool holds only {eval_entries} evaluation teams"));
                continue;
            }
            rows.push(self.evaluate(m, episodes)?);
        }
        Ok((rows, warnings))
    }
}

fn summarize_train(outcomes: &[EpisodeOutcome]) -> TrainSummary {
    let returns: Vec<f64> = outcomes.iter().map(|o| o.team_return).collect();
    TrainSummary {
        return_mean: mean_std(&returns).0,
        edges_min: outcomes.iter().map(|o| o.edges).min().unwrap_or(0),
        edges_max: outcomes.iter().map(|o| o.edges).max().unwrap_or(0),
    }
}

fn summarize_eval(m_groups: usize, outcomes: &[EpisodeOutcome]) -> EvalSummary {
    let returns: Vec<f64> = outcomes.iter().map(|o| o.team_return).collect();
    let (mean, std) = mean_std(&returns);
    let captured = outcomes.iter().filter(|o| o.captures > 0).count();
    EvalSummary {
        m_groups,
        episodes: outcomes.len(),
        return_mean: mean,
        return_std: std,
        capture_rate: captured as f64 / outcomes.len() as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::teams::{PoolConfig, PretrainConfig};
    use alloc::vec;

    pub(crate) fn tiny_pool(env: &EnvConfig) -> TeamPool {
        let cfg = PoolConfig {
            train_seeds: vec![0],
            eval_seeds: vec![1],
            team_size: 2,
            budget: PretrainConfig { episodes: 1, warmup: 32, ..PretrainConfig::default() },
            ..PoolConfig::default()
        };
        TeamPool::pretrain(&cfg, env).unwrap()
    }

    fn tiny(variant: Variant, n: usize, m: usize) -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.variant = variant;
        c.env = EnvConfig { n_agents: n, episode_limit: 8, ..EnvConfig::default() };
        c.m_groups = m;
        c.agent_model.hidden_dim = 6;
        c.agent_model.embed_dim = 4;
        c.rfm = crate::rfm::RfmConfig { node_dim: 4, edge_dim: 4, global_dim: 4, hidden: 0, ..Default::default() };
        c.ppo.hidden = vec![8];
        c.ppo.epochs = 1;
        c.ppo.minibatches = 2;
        c.train = crate::config::TrainConfig {
            total_env_steps: 48,
            episodes_per_iteration: 2,
            eval_interval: 16,
            checkpoint_interval: 32,
        };
        c.eval.episodes = 3;
        c
    }

    #[derive(Default)]
    struct Recorder {
        rows: Vec<MetricsRow>,
        checkpoints: Vec<TrainerState>,
        specs: Vec<EpisodeSpec>,
        stop_after: Option<usize>,
        polls: usize,
    }

    impl Observer for Recorder {
        type Error = Error;
        fn metrics(&mut self, row: &MetricsRow) -> Result<()> {
            self.rows.push(row.clone());
            Ok(())
        }
        fn checkpoint(&mut self, state: &TrainerState) -> Result<()> {
            self.checkpoints.push(state.clone());
            Ok(())
        }
        fn iteration(&mut self, _: &TrainerState, specs: &[EpisodeSpec]) -> Result<()> {
            self.specs.extend_from_slice(specs);
            Ok(())
        }
        fn should_stop(&mut self) -> bool {
            self.polls += 1;
            self.stop_after.map_or(false, |k| self.polls > k)
        }
    }

    #[test]
    fn run_emits_increasing_rows_and_is_deterministic() {
        let cfg = tiny(Variant::Mars, 5, 2);
        let pool = tiny_pool(&cfg.env);
        let before = pool.checksums();
        let mut a = Recorder::default();
        Trainer::new(cfg.clone(), &pool).unwrap().run(&mut a).unwrap();
        let mut b = Recorder::default();
        Trainer::new(cfg.clone(), &pool).unwrap().run(&mut b).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.checkpoints.last(), b.checkpoints.last());
        let steps: Vec<u64> = a.rows.iter().map(|r| r.env_steps).collect();
        assert_eq!(steps, vec![0, 16, 32, 48]);
        assert_eq!(pool.checksums(), before);
        assert_eq!(a.rows[0].cells(cfg.variant.features()).len(), MetricsRow::header(cfg.variant.features()).len());
    }

    #[test]
    fn resuming_matches_an_uninterrupted_run() {
        let cfg = tiny(Variant::PoamLike, 4, 1);
        let pool = tiny_pool(&cfg.env);
        let mut full = Recorder::default();
        Trainer::new(cfg.clone(), &pool).unwrap().run(&mut full).unwrap();

        let mut first = Recorder { stop_after: Some(1), ..Recorder::default() };
        Trainer::new(cfg.clone(), &pool).unwrap().run(&mut first).unwrap();
        let state = first.checkpoints.last().unwrap().clone();
        let mut rest = Recorder::default();
        Trainer::resume(cfg, &pool, state).unwrap().run(&mut rest).unwrap();
        let mut rows = first.rows.clone();
        rows.extend(rest.rows);
        assert_eq!(rows, full.rows);
        assert_eq!(rest.checkpoints.last(), full.checkpoints.last());
    }

    #[test]
    fn no_skeleton_uses_the_complete_graph() {
        let cfg = tiny(Variant::MarsNoSkeleton, 4, 2);
        let pool = tiny_pool(&cfg.env);
        let mut r = Recorder::default();
        Trainer::new(cfg, &pool).unwrap().run(&mut r).unwrap();
        assert!(r.specs.iter().all(|s| s.graph.edge_count() == 12));
        assert!(r.rows.iter().skip(1).all(|row| row.train.edges_min == 12 && row.train.edges_max == 12));
    }

    #[test]
    fn ippo_has_no_ed_or_rfm_columns() {
        let h = MetricsRow::header(Variant::IppoMaht.features());
        assert!(!h.iter().any(|c| c.starts_with("ed_") || c.starts_with("edges")));
        assert!(MetricsRow::header(Variant::Mars.features()).contains(&"ed_action"));
    }

    #[test]
    fn evaluation_contracts() {
        let cfg = tiny(Variant::IppoMaht, 4, 1);
        let pool = tiny_pool(&cfg.env);
        let t = Trainer::new(cfg, &pool).unwrap();
        let sum = t.state.params.checksum();
        let a = t.evaluate(1, 4).unwrap();
        assert_eq!(a, t.evaluate(1, 4).unwrap());
        assert_eq!(t.state.params.checksum(), sum);
        assert!(matches!(t.evaluate(1, 0), Err(Error::Usage(_))));
        let (rows, warnings) = t.sweep_groups(&[1, 2, 3, 4, 5], 2).unwrap();
        assert_eq!(rows.iter().map(|r| r.m_groups).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(warnings.len(), 2);
    }

    #[test]
    fn eval_compositions_use_held_out_teams() {
        let cfg = tiny(Variant::IppoMaht, 6, 3);
        let pool = tiny_pool(&cfg.env);
        let t = Trainer::new(cfg.clone(), &pool).unwrap();
        let eval = pool.split(Split::Eval);
        for id in 0..20 {
            let s = EpisodeSpec::plan(cfg.eval.seed, id, &eval, 6, 3, t.features(), 1).unwrap();
            assert!(s.composition.policies.iter().all(|p| eval.contains(p)));
        }
        let train_seeds: Vec<u64> = pool.split(Split::Train).iter().map(|&i| pool.policy(i).seed).collect();
        assert!(eval.iter().all(|&i| !train_seeds.contains(&pool.policy(i).seed)));
    }

    #[test]
    fn naive_baseline_evaluates_without_training() {
        let cfg = tiny(Variant::NaiveMarl, 4, 1);
        let pool = tiny_pool(&cfg.env);
        let mut t = Trainer::new(cfg, &pool).unwrap();
        assert!(t.state.naive_team.is_some());
        let mut r = Recorder::default();
        t.run(&mut r).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert!(t.iteration().is_err());
    }

    #[test]
    fn mismatched_checkpoint_is_rejected() {
        let cfg = tiny(Variant::Mars, 4, 1);
        let pool = tiny_pool(&cfg.env);
        let state = Trainer::new(cfg.clone(), &pool).unwrap().state;
        let other = tiny(Variant::IppoMaht, 4, 1);
        assert!(matches!(Trainer::resume(other, &pool, state), Err(Error::Config(_))));
    }
}
