//! Discrete predator–prey Dec-POMDP.
//!
//! Predators (every agent, controlled or not) move on a square grid and share
//! one team reward. A step pays `reward_capture` when at least `capture_min`
//! predators stand on the prey's cell after moving, otherwise `-step_cost`.
//! The prey then moves by a fixed scripted policy.
//!
//! With `capture_min = 1`, one agent and a stationary prey the same dynamics
//! give the small single-agent gridworld used as a PPO sanity task
//! ([`EnvConfig::sanity`]).

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, usage_err, Result};
use crate::rng::{self, Rng};

pub const N_ACTIONS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
    Stay = 4,
}

impl Action {
    pub const ALL: [Action; N_ACTIONS] = [Action::Up, Action::Down, Action::Left, Action::Right, Action::Stay];

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// `(d_row, d_col)`; rows grow downwards.
    pub fn delta(self) -> (i32, i32) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
            Action::Stay => (0, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreyPolicy {
    /// Step away from the nearest predator; ties broken up, right, down, left.
    Flee,
    Stationary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub grid_size: usize,
    pub n_agents: usize,
    /// Episode length `T`.
    pub episode_limit: usize,
    pub prey_policy_seed: u64,
    pub reward_capture: f64,
    pub step_cost: f64,
    pub capture_min: usize,
    pub prey_policy: PreyPolicy,
    /// Probability that the prey takes a uniformly random move instead.
    pub prey_noise: f64,
    /// End the episode at the first capture.
    pub capture_terminal: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            grid_size: 7,
            n_agents: 3,
            episode_limit: 50,
            prey_policy_seed: 0,
            reward_capture: 1.0,
            step_cost: 0.01,
            capture_min: 2,
            prey_policy: PreyPolicy::Flee,
            prey_noise: 0.0,
            capture_terminal: false,
        }
    }
}

impl EnvConfig {
    /// Single agent reaching a stationary prey on a 5×5 grid.
    pub fn sanity() -> Self {
        Self {
            grid_size: 5,
            n_agents: 1,
            episode_limit: 20,
            capture_min: 1,
            prey_policy: PreyPolicy::Stationary,
            ..Self::default()
        }
    }

    pub fn with_agents(&self, n_agents: usize) -> Self {
        Self { n_agents, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_layout()?;
        if self.episode_limit < 1 {
            return Err(config_err!("env.episode_limit must be at least 1"));
        }
        Ok(())
    }

    fn validate_layout(&self) -> Result<()> {
        if self.grid_size < 3 {
            return Err(config_err!("env.grid_size must be at least 3, got {}", self.grid_size));
        }
        if self.n_agents < 1 {
            return Err(config_err!("env.n_agents must be at least 1"));
        }
        let cells = self.grid_size * self.grid_size;
        if self.n_agents > cells - 1 {
            return Err(config_err!(
                "env.n_agents = {} does not fit a {}x{} grid next to the prey",
                self.n_agents,
                self.grid_size,
                self.grid_size
            ));
        }
        if self.capture_min < 1 {
            return Err(config_err!("env.capture_min must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.prey_noise) {
            return Err(config_err!("env.prey_noise must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        obs_dim(self.n_agents)
    }
}

/// Own position (2), prey offset (2), offsets of the other agents in id order
/// (2 each), elapsed fraction of the episode (1).
pub fn obs_dim(n_agents: usize) -> usize {
    2 + 2 + 2 * (n_agents - 1) + 1
}

pub type Pos = (i32, i32);
pub type Observation = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StepInfo {
    pub t: usize,
    pub predators_on_prey: usize,
    pub captured: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observations: Vec<Observation>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone)]
pub struct PredatorPrey {
    config: EnvConfig,
    agents: Vec<Pos>,
    prey: Pos,
    t: usize,
    done: bool,
    prey_rng: Rng,
}

impl PredatorPrey {
    /// Places the agents and the prey on distinct cells drawn from `seed`.
    pub fn reset(config: &EnvConfig, seed: u64) -> Result<(Self, Vec<Observation>)> {
        config.validate()?;
        let mut rng = rng::from_seed(seed);
        let n = config.grid_size;
        let mut cells: Vec<usize> = (0..n * n).collect();
        // partial Fisher–Yates: the first n_agents + 1 cells are a uniform draw
        for i in 0..=config.n_agents {
            let j = rng.gen_range(i..cells.len());
            cells.swap(i, j);
        }
        let to_pos = |c: usize| ((c / n) as i32, (c % n) as i32);
        let agents = cells[..config.n_agents].iter().map(|&c| to_pos(c)).collect();
        let prey = to_pos(cells[config.n_agents]);
        let env = Self {
            config: config.clone(),
            agents,
            prey,
            t: 0,
            done: false,
            prey_rng: rng::from_seed(config.prey_policy_seed ^ seed.rotate_left(17)),
        };
        let obs = env.observations();
        Ok((env, obs))
    }

    /// Explicit initial state; positions must be on the grid.
    pub fn from_positions(config: &EnvConfig, agents: Vec<Pos>, prey: Pos) -> Result<Self> {
        config.validate_layout()?;
        if agents.len() != config.n_agents {
            return Err(config_err!("{} positions for {} agents", agents.len(), config.n_agents));
        }
        let g = config.grid_size as i32;
        let on_grid = |p: &Pos| p.0 >= 0 && p.1 >= 0 && p.0 < g && p.1 < g;
        if !agents.iter().all(on_grid) || !on_grid(&prey) {
            return Err(config_err!("position off the grid"));
        }
        Ok(Self {
            config: config.clone(),
            agents,
            prey,
            t: 0,
            done: false,
            prey_rng: rng::from_seed(config.prey_policy_seed),
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn agents(&self) -> &[Pos] {
        &self.agents
    }

    pub fn prey(&self) -> Pos {
        self.prey
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn observations(&self) -> Vec<Observation> {
        (0..self.agents.len()).map(|i| self.observe(i)).collect()
    }

    pub fn observe(&self, i: usize) -> Observation {
        let scale = 1.0 / (self.config.grid_size - 1) as f64;
        let me = self.agents[i];
        let mut o = Vec::with_capacity(self.config.obs_dim());
        o.push(me.0 as f64 * scale);
        o.push(me.1 as f64 * scale);
        o.push((self.prey.0 - me.0) as f64 * scale);
        o.push((self.prey.1 - me.1) as f64 * scale);
        for (j, other) in self.agents.iter().enumerate() {
            if j != i {
                o.push((other.0 - me.0) as f64 * scale);
                o.push((other.1 - me.1) as f64 * scale);
            }
        }
        o.push(self.t as f64 / self.config.episode_limit.max(1) as f64);
        o
    }

    pub fn step(&mut self, actions: &[Action]) -> Result<StepResult> {
        if self.done {
            return Err(usage_err!("step after the episode is done"));
        }
        if actions.len() != self.agents.len() {
            return Err(usage_err!("{} actions for {} agents", actions.len(), self.agents.len()));
        }
        let noise_move = if self.config.prey_noise > 0.0 && self.prey_rng.gen::<f64>() < self.config.prey_noise {
            Some(Action::ALL[self.prey_rng.gen_range(0..N_ACTIONS)])
        } else {
            None
        };
        let outcome = transition(&self.config, &mut self.agents, &mut self.prey, actions, noise_move);
        self.t += 1;
        self.done = self.t >= self.config.episode_limit || (outcome.captured && self.config.capture_terminal);
        Ok(StepResult {
            observations: self.observations(),
            reward: outcome.reward,
            done: self.done,
            info: StepInfo { t: self.t, predators_on_prey: outcome.on_prey, captured: outcome.captured },
        })
    }
}

struct Outcome {
    reward: f64,
    on_prey: usize,
    captured: bool,
}

fn moved(p: Pos, a: Action, grid: i32) -> Pos {
    let (dr, dc) = a.delta();
    let (r, c) = (p.0 + dr, p.1 + dc);
    if r < 0 || c < 0 || r >= grid || c >= grid {
        p
    } else {
        (r, c)
    }
}

fn manhattan(a: Pos, b: Pos) -> i32 {
    (a.0 - b.0).abs() + (a.1 - b.1).abs()
}

/// The scripted prey's move given predator positions.
pub fn prey_move(config: &EnvConfig, agents: &[Pos], prey: Pos) -> Action {
    match config.prey_policy {
        PreyPolicy::Stationary => Action::Stay,
        PreyPolicy::Flee => {
            let Some(nearest) = agents.iter().copied().min_by_key(|a| manhattan(*a, prey)) else {
                return Action::Stay;
            };
            let grid = config.grid_size as i32;
            let mut best = Action::Stay;
            let mut best_d = i32::MIN;
            for a in [Action::Up, Action::Right, Action::Down, Action::Left, Action::Stay] {
                let d = manhattan(moved(prey, a, grid), nearest);
                if d > best_d {
                    best_d = d;
                    best = a;
                }
            }
            best
        }
    }
}

fn transition(config: &EnvConfig, agents: &mut [Pos], prey: &mut Pos, actions: &[Action], noise: Option<Action>) -> Outcome {
    let grid = config.grid_size as i32;
    for (p, a) in agents.iter_mut().zip(actions) {
        *p = moved(*p, *a, grid);
    }
    let on_prey = agents.iter().filter(|p| **p == *prey).count();
    let captured = on_prey >= config.capture_min;
    let reward = if captured { config.reward_capture } else { -config.step_cost };
    let a = noise.unwrap_or_else(|| prey_move(config, agents, *prey));
    *prey = moved(*prey, a, grid);
    Outcome { reward, on_prey, captured }
}

/// Largest episodic return any joint action sequence can achieve from the
/// environment's current state against the scripted prey.
///
/// Exact search over the reachable state space, layer by layer in time.
/// Refuses instances beyond a 5×5 grid or 3 agents, and stochastic prey.
pub fn optimal_return_bound(env: &PredatorPrey) -> Result<f64> {
    let cfg = env.config();
    if cfg.grid_size > 5 || cfg.n_agents > 3 {
        return Err(config_err!(
            "optimal_return_bound only handles grids up to 5x5 with at most 3 agents"
        ));
    }
    if cfg.prey_noise > 0.0 {
        return Err(config_err!("optimal_return_bound needs a deterministic prey"));
    }
    let horizon = cfg.episode_limit.saturating_sub(env.t());
    if env.is_done() || horizon == 0 {
        return Ok(0.0);
    }
    let n = cfg.n_agents;
    let n_joint = N_ACTIONS.pow(n as u32);
    // state → best return so far; terminal states are kept aside
    let mut layer: BTreeMap<(Vec<Pos>, Pos), f64> = BTreeMap::new();
    layer.insert((env.agents().to_vec(), env.prey()), 0.0);
    let mut best_terminal = f64::NEG_INFINITY;
    let mut actions = vec![Action::Stay; n];
    for _ in 0..horizon {
        let mut next: BTreeMap<(Vec<Pos>, Pos), f64> = BTreeMap::new();
        for ((agents, prey), value) in &layer {
            for code in 0..n_joint {
                let mut c = code;
                for a in actions.iter_mut() {
                    *a = Action::ALL[c % N_ACTIONS];
                    c /= N_ACTIONS;
                }
                let mut ag = agents.clone();
                let mut pr = *prey;
                let out = transition(cfg, &mut ag, &mut pr, &actions, None);
                let v = value + out.reward;
                if out.captured && cfg.capture_terminal {
                    best_terminal = best_terminal.max(v);
                    continue;
                }
                let slot = next.entry((ag, pr)).or_insert(f64::NEG_INFINITY);
                if v > *slot {
                    *slot = v;
                }
            }
        }
        layer = next;
    }
    let best_open = layer.values().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(best_open.max(best_terminal))
}

/// [`optimal_return_bound`] from the initial state `reset(config, seed)`.
pub fn optimal_return_bound_at_reset(config: &EnvConfig, seed: u64) -> Result<f64> {
    if config.episode_limit == 0 {
        return Ok(0.0);
    }
    let (env, _) = PredatorPrey::reset(config, seed)?;
    optimal_return_bound(&env)
}
