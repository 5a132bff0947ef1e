//! Frozen uncontrolled teams and episode compositions.
//!
//! Each team is a small Q-network shared by its members and trained by
//! independent Q-learning self-play. Five recipes differ in exploration,
//! shaping, tie-breaking, discount and width, which is enough to make the
//! resulting conventions incompatible with one another. Teams never learn
//! after pretraining.

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::env::{Action, EnvConfig, Observation, PredatorPrey, N_ACTIONS};
use crate::error::{config_err, usage_err, Result};
use crate::numerics::layers::Mlp;
use crate::numerics::optim::Adam;
use crate::numerics::{Graph, ParameterSet};
use crate::rng::{self, Rng, Stream};

/// Width of the egocentric team feature vector.
pub const FEATURE_DIM: usize = 12;
const MEMBER_SLOTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyId {
    /// Slow exploration decay, long horizon, mild pull towards groupmates.
    Steady,
    /// Fast decay, wide network, chases the prey hard.
    Eager,
    /// Strong pull towards groupmates.
    Huddle,
    /// Pushes groupmates apart.
    Scatter,
    /// Short horizon, narrow network.
    Myopic,
}

impl FamilyId {
    pub const ALL: [FamilyId; 5] =
        [FamilyId::Steady, FamilyId::Eager, FamilyId::Huddle, FamilyId::Scatter, FamilyId::Myopic];

    pub fn name(self) -> &'static str {
        match self {
            FamilyId::Steady => "steady",
            FamilyId::Eager => "eager",
            FamilyId::Huddle => "huddle",
            FamilyId::Scatter => "scatter",
            FamilyId::Myopic => "myopic",
        }
    }

    pub fn parse(s: &str) -> Result<FamilyId> {
        FamilyId::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| config_err!("unknown convention family `{s}`"))
    }

    pub fn recipe(self) -> Recipe {
        use Action::*;
        let order = |a: [Action; 5]| a.map(Action::index);
        match self {
            FamilyId::Steady => Recipe {
                eps_start: 1.0,
                eps_end: 0.05,
                eps_decay_fraction: 0.8,
                prey_shaping: 0.05,
                mate_shaping: 0.02,
                tie_order: order([Up, Right, Down, Left, Stay]),
                gamma: 0.95,
                width: 32,
                lr: 1e-3,
            },
            FamilyId::Eager => Recipe {
                eps_start: 0.5,
                eps_end: 0.02,
                eps_decay_fraction: 0.3,
                prey_shaping: 0.15,
                mate_shaping: 0.0,
                tie_order: order([Left, Down, Right, Up, Stay]),
                gamma: 0.9,
                width: 48,
                lr: 2e-3,
            },
            FamilyId::Huddle => Recipe {
                eps_start: 1.0,
                eps_end: 0.1,
                eps_decay_fraction: 0.5,
                prey_shaping: 0.03,
                mate_shaping: 0.1,
                tie_order: order([Stay, Down, Left, Up, Right]),
                gamma: 0.97,
                width: 24,
                lr: 1e-3,
            },
            FamilyId::Scatter => Recipe {
                eps_start: 1.0,
                eps_end: 0.05,
                eps_decay_fraction: 0.6,
                prey_shaping: 0.05,
                mate_shaping: -0.1,
                tie_order: order([Right, Up, Stay, Left, Down]),
                gamma: 0.93,
                width: 32,
                lr: 1.5e-3,
            },
            FamilyId::Myopic => Recipe {
                eps_start: 0.8,
                eps_end: 0.05,
                eps_decay_fraction: 0.4,
                prey_shaping: 0.1,
                mate_shaping: -0.03,
                tie_order: order([Down, Stay, Right, Left, Up]),
                gamma: 0.7,
                width: 16,
                lr: 3e-3,
            },
        }
    }
}

/// Hyperparameters of one convention family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of the budget over which ε decays linearly.
    pub eps_decay_fraction: f64,
    /// Bonus per cell of distance closed towards the prey.
    pub prey_shaping: f64,
    /// Signed bonus per cell of distance closed towards the nearest groupmate.
    pub mate_shaping: f64,
    /// Greedy ties go to the action listed first.
    pub tie_order: [usize; N_ACTIONS],
    pub gamma: f64,
    pub width: usize,
    pub lr: f64,
}

/// Budget shared by all families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub episodes: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub target_sync: usize,
    /// Gradient steps between environment steps' worth of data.
    pub updates_per_step: usize,
    pub warmup: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { episodes: 150, batch_size: 32, buffer_capacity: 5000, target_sync: 200, updates_per_step: 1, warmup: 200 }
    }
}

/// How uncontrolled agents choose among their Q-values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ActMode {
    Greedy,
    Softmax { temperature: f64 },
}

impl Default for ActMode {
    fn default() -> Self {
        ActMode::Greedy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeamPolicy {
    pub family: FamilyId,
    pub seed: u64,
    /// Group size used during pretraining.
    pub size: usize,
    pub params: ParameterSet,
}

fn q_network(width: usize) -> Mlp {
    Mlp::new("q", FEATURE_DIM, &[width], N_ACTIONS, false)
}

/// Egocentric, team-size independent features of agent `me` whose groupmates
/// are `mates` (ids, excluding `me`), read off its own observation.
pub fn team_features(obs: &[f64], n_agents: usize, me: usize, slot: usize, mates: &[usize]) -> Result<Vec<f64>> {
    if obs.len() != crate::env::obs_dim(n_agents) || me >= n_agents {
        return Err(usage_err!("observation does not belong to agent {me} of {n_agents}"));
    }
    let offset = |j: usize| {
        let k = 4 + 2 * if j < me { j } else { j - 1 };
        (obs[k], obs[k + 1])
    };
    let mut f = Vec::with_capacity(FEATURE_DIM);
    f.extend_from_slice(&obs[0..4]);
    let nearest = mates
        .iter()
        .filter(|&&j| j != me)
        .map(|&j| {
            if j >= n_agents {
                return Err(usage_err!("groupmate {j} out of range"));
            }
            Ok(offset(j))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .min_by(|a, b| (a.0.abs() + a.1.abs()).total_cmp(&(b.0.abs() + b.1.abs())));
    match nearest {
        Some((dr, dc)) => f.extend([dr, dc, 1.0]),
        None => f.extend([0.0, 0.0, 0.0]),
    }
    let mut onehot = [0.0; MEMBER_SLOTS];
    onehot[slot.min(MEMBER_SLOTS - 1)] = 1.0;
    f.extend(onehot);
    f.push(obs[obs.len() - 1]);
    Ok(f)
}

fn argmax_with_order(q: &[f64], order: &[usize; N_ACTIONS]) -> usize {
    let mut best = order[0];
    for &a in &order[1..] {
        if q[a] > q[best] {
            best = a;
        }
    }
    best
}

impl TeamPolicy {
    fn network(&self) -> Mlp {
        q_network(self.family.recipe().width)
    }

    /// Q-values for a batch of feature rows.
    pub fn q_values(&self, features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::inference();
        let rows = features.len();
        let x = g.matrix(rows, FEATURE_DIM, features.concat());
        let q = self.network().forward(&mut g, &self.params, x)?;
        Ok((0..rows).map(|i| g.value(q).row(i).to_vec()).collect())
    }

    /// Greedy action on one feature vector.
    pub fn greedy(&self, features: &[f64]) -> Result<usize> {
        let q = self.q_values(&[features.to_vec()])?;
        Ok(argmax_with_order(&q[0], &self.family.recipe().tie_order))
    }

    /// Joint action of the group `members` (agent ids in slot order) given
    /// every agent's current observation.
    pub fn act(
        &self,
        members: &[usize],
        observations: &[Observation],
        mode: ActMode,
        rng: &mut Rng,
    ) -> Result<Vec<Action>> {
        if members.is_empty() {
            return Err(usage_err!("empty group"));
        }
        let n = observations.len();
        let mut feats = Vec::with_capacity(members.len());
        for (slot, &me) in members.iter().enumerate() {
            if me >= n {
                return Err(usage_err!("member {me} has no observation"));
            }
            feats.push(team_features(&observations[me], n, me, slot, members)?);
        }
        let q = self.q_values(&feats)?;
        let order = self.family.recipe().tie_order;
        q.iter()
            .map(|qa| {
                let a = match mode {
                    ActMode::Greedy => argmax_with_order(qa, &order),
                    ActMode::Softmax { temperature } => {
                        if !(temperature > 0.0) {
                            return Err(config_err!("softmax temperature must be positive"));
                        }
                        let scaled: Vec<f64> = qa.iter().map(|v| v / temperature).collect();
                        sample_index(&crate::numerics::softmax(&scaled), rng)
                    }
                };
                Ok(Action::ALL[a])
            })
            .collect()
    }

    pub fn checksum(&self) -> u64 {
        self.params.checksum()
    }
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_index(probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

struct Transition {
    features: Vec<f64>,
    action: usize,
    reward: f64,
    next: Vec<f64>,
    done: bool,
}

fn manhattan(dr: f64, dc: f64) -> f64 {
    dr.abs() + dc.abs()
}

/// Trains a team of `size` agents by shared-parameter independent Q-learning
/// in self-play. Deterministic given `(family, size, seed, env, budget)`.
pub fn pretrain_team(
    family: FamilyId,
    size: usize,
    seed: u64,
    env: &EnvConfig,
    budget: &PretrainConfig,
) -> Result<TeamPolicy> {
    if size < 1 {
        return Err(config_err!("team size must be at least 1"));
    }
    if budget.batch_size < 1 || budget.buffer_capacity < budget.batch_size || budget.target_sync < 1 {
        return Err(config_err!("pretrain budget is inconsistent"));
    }
    let env_cfg = env.with_agents(size);
    env_cfg.validate()?;
    let recipe = family.recipe();
    let net = q_network(recipe.width);
    let mut params = ParameterSet::new(rng::child_seed(seed, Stream::Init, family as u64));
    net.init(&mut params)?;
    let mut target = params.clone();
    let mut opt = Adam::new(recipe.lr);
    let mut rng = rng::stream(seed, Stream::Pretrain, family as u64);
    let members: Vec<usize> = (0..size).collect();
    let scale = 1.0 / (env_cfg.grid_size - 1) as f64;

    let mut buffer: VecDeque<Transition> = VecDeque::with_capacity(budget.buffer_capacity);
    let total_steps = (budget.episodes * env_cfg.episode_limit).max(1);
    let decay_steps = (recipe.eps_decay_fraction * total_steps as f64).max(1.0);
    let mut step = 0usize;
    let mut updates = 0usize;

    for ep in 0..budget.episodes {
        let (mut world, obs) = PredatorPrey::reset(&env_cfg, rng::child_seed(seed, Stream::EnvReset, ep as u64))?;
        let mut feats = features_of(&obs, &members)?;
        loop {
            let frac = (step as f64 / decay_steps).min(1.0);
            let eps = recipe.eps_start + (recipe.eps_end - recipe.eps_start) * frac;
            let greedy = q_argmax(&net, &params, &feats, &recipe.tie_order)?;
            let actions: Vec<usize> = greedy
                .iter()
                .map(|&a| if rng.gen::<f64>() < eps { rng.gen_range(0..N_ACTIONS) } else { a })
                .collect();
            let joint: Vec<Action> = actions.iter().map(|&a| Action::ALL[a]).collect();
            let result = world.step(&joint)?;
            let next = features_of(&result.observations, &members)?;
            for i in 0..size {
                let (f0, f1) = (&feats[i], &next[i]);
                let prey_closed = (manhattan(f0[2], f0[3]) - manhattan(f1[2], f1[3])) / scale;
                let mate_closed = if f0[6] > 0.0 { (manhattan(f0[4], f0[5]) - manhattan(f1[4], f1[5])) / scale } else { 0.0 };
                let reward = result.reward + recipe.prey_shaping * prey_closed + recipe.mate_shaping * mate_closed;
                if buffer.len() == budget.buffer_capacity {
                    buffer.pop_front();
                }
                buffer.push_back(Transition {
                    features: f0.clone(),
                    action: actions[i],
                    reward,
                    next: f1.clone(),
                    done: result.done,
                });
            }
            step += 1;
            if buffer.len() >= budget.warmup.max(budget.batch_size) {
                for _ in 0..budget.updates_per_step {
                    q_update(&net, &mut params, &target, &mut opt, &buffer, budget.batch_size, recipe.gamma, &mut rng)?;
                    updates += 1;
                    if updates % budget.target_sync == 0 {
                        target = params.clone();
                    }
                }
            }
            feats = next;
            if result.done {
                break;
            }
        }
    }
    if !params.is_finite() {
        return Err(crate::Error::Numerical(alloc::format!("{} team diverged during pretraining", family.name())));
    }
    Ok(TeamPolicy { family, seed, size, params })
}

fn features_of(obs: &[Observation], members: &[usize]) -> Result<Vec<Vec<f64>>> {
    members.iter().enumerate().map(|(slot, &me)| team_features(&obs[me], obs.len(), me, slot, members)).collect()
}

fn q_argmax(net: &Mlp, params: &ParameterSet, feats: &[Vec<f64>], order: &[usize; N_ACTIONS]) -> Result<Vec<usize>> {
    let mut g = Graph::inference();
    let x = g.matrix(feats.len(), FEATURE_DIM, feats.concat());
    let q = net.forward(&mut g, params, x)?;
    Ok((0..feats.len()).map(|i| argmax_with_order(g.value(q).row(i), order)).collect())
}

#[allow(clippy::too_many_arguments)]
fn q_update(
    net: &Mlp,
    params: &mut ParameterSet,
    target: &ParameterSet,
    opt: &mut Adam,
    buffer: &VecDeque<Transition>,
    batch: usize,
    gamma: f64,
    rng: &mut Rng,
) -> Result<()> {
    let idx: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..buffer.len())).collect();
    let mut next = Vec::with_capacity(batch * FEATURE_DIM);
    let mut cur = Vec::with_capacity(batch * FEATURE_DIM);
    for &i in &idx {
        next.extend_from_slice(&buffer[i].next);
        cur.extend_from_slice(&buffer[i].features);
    }
    let mut tg = Graph::inference();
    let nx = tg.matrix(batch, FEATURE_DIM, next);
    let qn = net.forward(&mut tg, target, nx)?;
    let y: Vec<f64> = idx
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let t = &buffer[i];
            let best = tg.value(qn).row(k).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            t.reward + if t.done { 0.0 } else { gamma * best }
        })
        .collect();
    let actions: Vec<usize> = idx.iter().map(|&i| buffer[i].action).collect();

    let mut g = Graph::new();
    let x = g.matrix(batch, FEATURE_DIM, cur);
    let q = net.forward(&mut g, params, x)?;
    let qa = g.pick_cols(q, &actions)?;
    let yv = g.matrix(batch, 1, y);
    let d = g.sub(qa, yv)?;
    let sq = g.square(d);
    let loss = g.mean(sq);
    let mut grads = g.backward(loss)?.param_grads();
    crate::numerics::optim::clip_grad_norm(&mut grads, 10.0);
    opt.apply(params, &grads)
}

/// A pool entry is reserved for training or for held-out evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub split: Split,
    pub policy: TeamPolicy,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TeamPool {
    pub entries: Vec<PoolEntry>,
}

/// What to pretrain: every family × every seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoolConfig {
    pub families: Vec<FamilyId>,
    pub train_seeds: Vec<u64>,
    pub eval_seeds: Vec<u64>,
    pub team_size: usize,
    pub budget: PretrainConfig,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            families: FamilyId::ALL.to_vec(),
            train_seeds: vec![0],
            eval_seeds: vec![1000],
            team_size: 3,
            budget: PretrainConfig::default(),
        }
    }
}

impl PoolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.families.is_empty() {
            return Err(config_err!("pool.families is empty"));
        }
        if self.train_seeds.is_empty() {
            return Err(config_err!("pool.train_seeds is empty"));
        }
        if let Some(s) = self.train_seeds.iter().find(|s| self.eval_seeds.contains(s)) {
            return Err(config_err!("pool seed {s} is both a train and an eval seed"));
        }
        if self.team_size < 1 {
            return Err(config_err!("pool.team_size must be at least 1"));
        }
        Ok(())
    }
}

impl TeamPool {
    /// Pretrains every `(family, seed)` pair, train seeds first.
    pub fn pretrain(config: &PoolConfig, env: &EnvConfig) -> Result<TeamPool> {
        Self::pretrain_with(config, env, |_, _| {})
    }

    /// Same as [`TeamPool::pretrain`], reporting each finished team.
    pub fn pretrain_with(
        config: &PoolConfig,
        env: &EnvConfig,
        mut on_team: impl FnMut(usize, &PoolEntry),
    ) -> Result<TeamPool> {
        config.validate()?;
        let mut entries = Vec::new();
        for (split, seeds) in [(Split::Train, &config.train_seeds), (Split::Eval, &config.eval_seeds)] {
            for &seed in seeds {
                for &family in &config.families {
                    let policy = pretrain_team(family, config.team_size, seed, env, &config.budget)?;
                    let entry = PoolEntry { split, policy };
                    on_team(entries.len(), &entry);
                    entries.push(entry);
                }
            }
        }
        Ok(TeamPool { entries })
    }

    /// Indices of the entries in `split`.
    pub fn split(&self, split: Split) -> Vec<usize> {
        (0..self.entries.len()).filter(|&i| self.entries[i].split == split).collect()
    }

    pub fn policy(&self, index: usize) -> &TeamPolicy {
        &self.entries[index].policy
    }

    pub fn checksums(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.policy.checksum()).collect()
    }
}

/// One episode's partition of agents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeamComposition {
    pub n_total: usize,
    /// `0` for controlled agents, `k` for members of uncontrolled group `k`.
    pub group_of: Vec<usize>,
    /// Pool index bound to each uncontrolled group (`policies[k − 1]`).
    pub policies: Vec<usize>,
}

impl TeamComposition {
    /// Every agent controlled.
    pub fn all_controlled(n_total: usize) -> Self {
        Self { n_total, group_of: vec![0; n_total], policies: Vec::new() }
    }

    pub fn m_groups(&self) -> usize {
        self.policies.len()
    }

    pub fn is_controlled(&self, agent: usize) -> bool {
        self.group_of[agent] == 0
    }

    pub fn controlled(&self) -> Vec<usize> {
        self.members(0)
    }

    pub fn n_controlled(&self) -> usize {
        self.group_of.iter().filter(|&&g| g == 0).count()
    }

    /// Agent ids of group `k` in ascending order.
    pub fn members(&self, k: usize) -> Vec<usize> {
        (0..self.n_total).filter(|&i| self.group_of[i] == k).collect()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        (0..=self.m_groups()).map(|k| self.members(k).len()).collect()
    }

    /// Checks that the groups partition the agents with every group nonempty.
    pub fn validate(&self) -> Result<()> {
        if self.group_of.len() != self.n_total {
            return Err(usage_err!("composition covers {} of {} agents", self.group_of.len(), self.n_total));
        }
        let sizes = self.group_sizes();
        if sizes.iter().sum::<usize>() != self.n_total {
            return Err(usage_err!("group index out of range"));
        }
        if let Some(k) = sizes.iter().position(|&s| s == 0) {
            return Err(usage_err!("group {k} is empty"));
        }
        Ok(())
    }
}

/// Draws `m_groups` distinct pool entries from `candidates` uniformly, group
/// sizes uniformly from the ordered compositions of `n_total` into
/// `m_groups + 1` positive parts (the first part is the controlled set), and a
/// uniformly random assignment of agent ids to groups.
pub fn sample_composition(candidates: &[usize], n_total: usize, m_groups: usize, rng: &mut Rng) -> Result<TeamComposition> {
    if n_total < m_groups + 1 {
        return Err(config_err!("n_total = {n_total} cannot hold {m_groups} groups and a controlled agent"));
    }
    if candidates.len() < m_groups {
        return Err(config_err!("pool has {} entries, {m_groups} groups requested", candidates.len()));
    }
    let policies: Vec<usize> = sample(rng, candidates.len(), m_groups).into_iter().map(|i| candidates[i]).collect();
    let mut cuts: Vec<usize> = sample(rng, n_total - 1, m_groups).into_iter().map(|c| c + 1).collect();
    cuts.sort_unstable();
    let mut sizes = Vec::with_capacity(m_groups + 1);
    let mut prev = 0;
    for &c in cuts.iter().chain(core::iter::once(&n_total)) {
        sizes.push(c - prev);
        prev = c;
    }
    let mut ids: Vec<usize> = (0..n_total).collect();
    ids.shuffle(rng);
    let mut group_of = vec![0; n_total];
    let mut it = ids.into_iter();
    for (k, &s) in sizes.iter().enumerate() {
        for id in it.by_ref().take(s) {
            group_of[id] = k;
        }
    }
    Ok(TeamComposition { n_total, group_of, policies })
}

/// Fraction of probe feature rows on which two policies' greedy actions differ.
pub fn disagreement(a: &TeamPolicy, b: &TeamPolicy, probes: &[Vec<f64>]) -> Result<f64> {
    if probes.is_empty() {
        return Err(usage_err!("no probe observations"));
    }
    let (qa, qb) = (a.q_values(probes)?, b.q_values(probes)?);
    let (oa, ob) = (a.family.recipe().tie_order, b.family.recipe().tie_order);
    let differ = qa.iter().zip(&qb).filter(|(x, y)| argmax_with_order(x, &oa) != argmax_with_order(y, &ob)).count();
    Ok(differ as f64 / probes.len() as f64)
}

/// Feature rows from random states of a `group_size` team in `env`.
pub fn probe_features(env: &EnvConfig, group_size: usize, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let cfg = env.with_agents(group_size);
    let mut rng = rng::from_seed(seed);
    let members: Vec<usize> = (0..group_size).collect();
    let mut out = Vec::with_capacity(count);
    let mut ep = 0u64;
    while out.len() < count {
        let (mut world, _) = PredatorPrey::reset(&cfg, rng::child_seed(seed, Stream::EnvReset, ep))?;
        ep += 1;
        let steps = rng.gen_range(0..cfg.episode_limit);
        for _ in 0..steps {
            let joint: Vec<Action> = (0..group_size).map(|_| Action::ALL[rng.gen_range(0..N_ACTIONS)]).collect();
            world.step(&joint)?;
        }
        let obs = world.observations();
        let agent = rng.gen_range(0..group_size);
        out.push(team_features(&obs[agent], group_size, agent, agent, &members)?);
    }
    Ok(out)
}

/// Display label `family/seed`.
pub fn label(policy: &TeamPolicy) -> String {
    alloc::format!("{}/{}", policy.family.name(), policy.seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_budget() -> PretrainConfig {
        PretrainConfig { episodes: 12, warmup: 64, ..PretrainConfig::default() }
    }

    fn env() -> EnvConfig {
        EnvConfig { episode_limit: 25, ..EnvConfig::default() }
    }

    #[test]
    fn pretraining_is_deterministic() {
        let a = pretrain_team(FamilyId::Huddle, 2, 5, &env(), &small_budget()).unwrap();
        let b = pretrain_team(FamilyId::Huddle, 2, 5, &env(), &small_budget()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.checksum(), b.checksum());
    }

    #[test]
    fn seeds_and_families_disagree() {
        let probes = probe_features(&env(), 3, 1000, 77).unwrap();
        let a = pretrain_team(FamilyId::Steady, 3, 1, &env(), &small_budget()).unwrap();
        let b = pretrain_team(FamilyId::Steady, 3, 2, &env(), &small_budget()).unwrap();
        let c = pretrain_team(FamilyId::Scatter, 3, 1, &env(), &small_budget()).unwrap();
        assert!(disagreement(&a, &b, &probes).unwrap() > 0.1);
        assert!(disagreement(&a, &c, &probes).unwrap() > 0.1);
    }

    #[test]
    fn unknown_family_and_bad_size() {
        assert!(matches!(FamilyId::parse("qmix"), Err(crate::Error::Config(_))));
        assert_eq!(FamilyId::parse("eager").unwrap(), FamilyId::Eager);
        assert!(pretrain_team(FamilyId::Eager, 0, 0, &env(), &small_budget()).is_err());
    }

    #[test]
    fn acting() {
        let p = pretrain_team(FamilyId::Myopic, 2, 3, &env(), &PretrainConfig { episodes: 2, ..small_budget() }).unwrap();
        let cfg = env().with_agents(5);
        let (_, obs) = PredatorPrey::reset(&cfg, 4).unwrap();
        let mut rng = rng::from_seed(0);
        let a = p.act(&[1, 3], &obs, ActMode::Greedy, &mut rng).unwrap();
        assert_eq!(a, p.act(&[1, 3], &obs, ActMode::Greedy, &mut rng).unwrap());
        assert_eq!(a.len(), 2);
        assert_eq!(p.act(&[4], &obs, ActMode::Greedy, &mut rng).unwrap().len(), 1);
        let s = p.act(&[0, 2, 4], &obs, ActMode::Softmax { temperature: 0.5 }, &mut rng).unwrap();
        assert!(s.iter().all(|x| Action::ALL.contains(x)));
        assert!(matches!(p.act(&[7], &obs, ActMode::Greedy, &mut rng), Err(crate::Error::Usage(_))));
    }

    #[test]
    fn composition_arithmetic_and_degenerate_case() {
        let mut rng = rng::from_seed(1);
        let c = sample_composition(&[0, 1, 2], 4, 0, &mut rng).unwrap();
        assert_eq!(c, TeamComposition::all_controlled(4));
        for _ in 0..50 {
            let c = sample_composition(&[0, 1, 2], 5, 2, &mut rng).unwrap();
            let s = c.group_sizes();
            assert_eq!(s[0], 5 - s[1] - s[2]);
        }
        assert!(sample_composition(&[0], 5, 2, &mut rng).is_err());
        assert!(sample_composition(&[0, 1, 2], 2, 2, &mut rng).is_err());
    }

    #[test]
    fn compositions_partition_agents() {
        let mut rng = rng::from_seed(2);
        for i in 0..1000 {
            let n = 2 + i % 10;
            let m = (i / 10) % n.min(6);
            let c = sample_composition(&[0, 1, 2, 3, 4, 5], n, m, &mut rng).unwrap();
            c.validate().unwrap();
            let mut p = c.policies.clone();
            p.sort_unstable();
            p.dedup();
            assert_eq!(p.len(), m);
        }
    }

    #[test]
    fn policy_draws_are_uniform() {
        let mut rng = rng::from_seed(3);
        let mut counts = [0usize; 5];
        for _ in 0..10_000 {
            counts[sample_composition(&[0, 1, 2, 3, 4], 4, 1, &mut rng).unwrap().policies[0]] += 1;
        }
        for c in counts {
            let f = c as f64 / 10_000.0;
            assert!((0.18..=0.22).contains(&f), "{counts:?}");
        }
    }

    #[test]
    fn group_sizes_are_uniform_over_compositions() {
        // n = 5 into 3 positive ordered parts: C(4, 2) = 6 outcomes
        let mut rng = rng::from_seed(4);
        let mut counts = alloc::collections::BTreeMap::new();
        for _ in 0..12_000 {
            *counts.entry(sample_composition(&[0, 1], 5, 2, &mut rng).unwrap().group_sizes()).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 6);
        for c in counts.values() {
            assert!((1800..2200).contains(c), "{counts:?}");
        }
    }

    #[test]
    fn pool_split_is_disjoint() {
        let cfg = PoolConfig { train_seeds: vec![1, 2], eval_seeds: vec![2], ..PoolConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = PoolConfig {
            families: vec![FamilyId::Eager, FamilyId::Myopic],
            train_seeds: vec![1],
            eval_seeds: vec![9],
            team_size: 2,
            budget: PretrainConfig { episodes: 1, ..small_budget() },
        };
        let pool = TeamPool::pretrain(&cfg, &env()).unwrap();
        assert_eq!(pool.split(Split::Train), vec![0, 1]);
        assert_eq!(pool.split(Split::Eval), vec![2, 3]);
    }
}
