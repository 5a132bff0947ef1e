//! Episode execution under the mixed joint policy.
//!
//! Several episodes run in lock step so that every network is applied to one
//! batched matrix per timestep. Each episode owns its random streams, derived
//! from `(master, episode id)`, so its trajectory does not depend on which
//! other episodes share the batch.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::agent_model::{encoder_input, EdTarget};
use crate::env::{Action, EnvConfig, Observation, PredatorPrey, N_ACTIONS};
use crate::error::{usage_err, Result};
use crate::numerics::{Graph, ParameterSet, Tensor};
use crate::policy::{gae, ActionDistribution, Features, Networks, RolloutBatch, Unit};
use crate::rfm::{GraphBatch, NodeInputs};
use crate::rng::{self, Rng, Stream};
use crate::skeleton::{build_full_graph, build_skeleton, SkeletonGraph};
use crate::teams::{sample_composition, ActMode, TeamComposition, TeamPolicy, TeamPool};

/// Everything that defines one episode before it runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub master: u64,
    pub id: u64,
    pub composition: TeamComposition,
    pub graph: SkeletonGraph,
}

impl EpisodeSpec {
    /// Draws the composition and the interaction graph of episode `id`.
    #[allow(clippy::too_many_arguments)]
    pub fn plan(
        master: u64,
        id: u64,
        candidates: &[usize],
        n_total: usize,
        m_groups: usize,
        features: Features,
        representatives: usize,
    ) -> Result<Self> {
        let composition =
            sample_composition(candidates, n_total, m_groups, &mut rng::stream(master, Stream::Composition, id))?;
        let graph = if features.sparse_skeleton {
            build_skeleton(&composition.group_of, representatives, &mut rng::stream(master, Stream::Skeleton, id))?
        } else {
            build_full_graph(n_total)
        };
        Ok(Self { master, id, composition, graph })
    }

    pub fn env_seed(&self) -> u64 {
        rng::child_seed(self.master, Stream::EnvReset, self.id)
    }
}

/// Who fills the controlled seats.
#[derive(Clone, Copy)]
pub enum Controller<'a> {
    Learned { nets: &'a Networks, params: &'a ParameterSet },
    /// A frozen pool team playing the controlled seats as one group.
    Team(&'a TeamPolicy),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub team_return: f64,
    /// Timesteps on which the prey was captured.
    pub captures: usize,
    pub steps: usize,
    pub edges: usize,
}

pub struct Rollouts {
    /// Present when collecting for training.
    pub batch: Option<RolloutBatch>,
    pub outcomes: Vec<EpisodeOutcome>,
}

struct StepRecord {
    base: Vec<f64>,
    actions: Vec<usize>,
    log_probs: Vec<f64>,
    values: Vec<f64>,
    reward: f64,
    done: bool,
    nodes: NodeInputs,
    observations: Vec<Observation>,
}

/// Offset of agent `j` in agent `me`'s observation.
fn offset_of(obs: &[f64], me: usize, j: usize) -> (f64, f64) {
    let k = 4 + 2 * if j < me { j } else { j - 1 };
    (obs[k], obs[k + 1])
}

/// Relational-model inputs: controlled agents bring their embedding, all
/// others their offset as seen by the lowest-id controlled agent.
fn node_inputs(comp: &TeamComposition, obs: &[Observation], emb: Option<&[f64]>, dv: usize) -> NodeInputs {
    let n = comp.n_total;
    let observer = (0..n).find(|&i| comp.is_controlled(i)).unwrap_or(0);
    let mut nodes = NodeInputs {
        embeddings: Vec::with_capacity(n * dv),
        positions: Vec::with_capacity(n * 2),
        unknown: Vec::with_capacity(n),
    };
    for i in 0..n {
        if comp.is_controlled(i) {
            match emb {
                Some(e) => nodes.embeddings.extend_from_slice(&e[i * dv..(i + 1) * dv]),
                None => nodes.embeddings.extend(core::iter::repeat(0.0).take(dv)),
            }
            nodes.positions.extend([0.0, 0.0]);
            nodes.unknown.push(0.0);
        } else {
            nodes.embeddings.extend(core::iter::repeat(0.0).take(dv));
            let (dr, dc) = offset_of(&obs[observer], observer, i);
            nodes.positions.extend([dr, dc]);
            nodes.unknown.push(1.0);
        }
    }
    nodes
}

/// Runs `specs` to completion. With `collect`, controlled actions are sampled
/// and a training batch is assembled (advantages included); otherwise they
/// are greedy and only outcomes are returned.
pub fn run_episodes(
    env_cfg: &EnvConfig,
    pool: &TeamPool,
    act_mode: ActMode,
    controller: Controller<'_>,
    specs: &[EpisodeSpec],
    collect: bool,
    gamma_lambda: (f64, f64),
) -> Result<Rollouts> {
    let n = env_cfg.n_agents;
    let n_eps = specs.len();
    if specs.iter().any(|s| s.composition.n_total != n || s.graph.n != n) {
        return Err(usage_err!("episode specs do not match {n} agents"));
    }
    if collect && matches!(controller, Controller::Team(_)) {
        return Err(usage_err!("a frozen team cannot collect training data"));
    }
    let od = env_cfg.obs_dim();
    let mut worlds = Vec::with_capacity(n_eps);
    let mut obs = Vec::with_capacity(n_eps);
    for s in specs {
        s.composition.validate()?;
        let (w, o) = PredatorPrey::reset(env_cfg, s.env_seed())?;
        worlds.push(w);
        obs.push(o);
    }
    let mut act_rngs: Vec<Rng> = specs.iter().map(|s| rng::stream(s.master, Stream::Actions, s.id)).collect();
    let mut team_rngs: Vec<Rng> = specs.iter().map(|s| rng::stream(s.master, Stream::Uncontrolled, s.id)).collect();
    let mut done = vec![false; n_eps];
    let mut prev: Vec<Vec<Option<usize>>> = vec![vec![None; n]; n_eps];
    let mut outcomes: Vec<EpisodeOutcome> = specs
        .iter()
        .map(|s| EpisodeOutcome { team_return: 0.0, captures: 0, steps: 0, edges: s.graph.edge_count() })
        .collect();
    let mut records: Vec<Vec<StepRecord>> = (0..n_eps).map(|_| Vec::new()).collect();

    let (nets, params) = match controller {
        Controller::Learned { nets, params } => (Some(nets), Some(params)),
        Controller::Team(_) => (None, None),
    };
    let hidden_dim = nets.and_then(|n| n.agent_model.as_ref()).map_or(0, |m| m.hidden_dim());
    let mut hidden: Vec<Vec<f64>> = vec![vec![0.0; n * hidden_dim]; n_eps];

    while done.iter().any(|d| !d) {
        let active: Vec<usize> = (0..n_eps).filter(|&e| !done[e]).collect();
        let rows = active.len() * n;

        // Network pass for all agents of all active episodes.
        let mut logits: Option<Tensor> = None;
        let mut values: Option<Tensor> = None;
        let mut bases: Vec<Vec<f64>> = Vec::new();
        let mut nodes_per: Vec<NodeInputs> = Vec::new();
        if let (Some(nets), Some(p)) = (nets, params) {
            let mut g = Graph::inference();
            let mut obs_data = Vec::with_capacity(rows * od);
            for &e in &active {
                for o in &obs[e] {
                    obs_data.extend_from_slice(o);
                }
            }
            let obs_var = g.matrix(rows, od, obs_data);
            let mut emb: Option<Tensor> = None;
            let base = if let Some(model) = &nets.agent_model {
                let mut x = Vec::with_capacity(rows * model.input_dim());
                let mut h = Vec::with_capacity(rows * hidden_dim);
                for &e in &active {
                    for i in 0..n {
                        x.extend(encoder_input(&obs[e][i], prev[e][i], N_ACTIONS));
                    }
                    h.extend_from_slice(&hidden[e]);
                }
                let xv = g.matrix(rows, model.input_dim(), x);
                let hv = g.matrix(rows, hidden_dim, h);
                let (hn, ev) = model.encode_step(&mut g, p, hv, xv)?;
                for (k, &e) in active.iter().enumerate() {
                    hidden[e].copy_from_slice(&g.value(hn).data()[k * n * hidden_dim..(k + 1) * n * hidden_dim]);
                }
                emb = Some(g.value(ev).clone());
                g.concat_cols(&[obs_var, ev])?
            } else {
                obs_var
            };
            let bd = nets.base_dim();
            for k in 0..active.len() {
                bases.push(g.value(base).data()[k * n * bd..(k + 1) * n * bd].to_vec());
            }
            let inputs = if let Some(rfm) = &nets.rfm {
                let dv = rfm.config.node_dim;
                let mut gb = GraphBatch::default();
                let mut all = NodeInputs::default();
                for (k, &e) in active.iter().enumerate() {
                    let ed = emb.as_ref().map(|t| &t.data()[k * n * dv..(k + 1) * n * dv]);
                    let ni = node_inputs(&specs[e].composition, &obs[e], ed, dv);
                    all.extend(&ni);
                    nodes_per.push(ni);
                    gb.push(&specs[e].graph);
                }
                let z = rfm.embed(&mut g, p, &gb, &all)?;
                g.concat_cols(&[base, z])?
            } else {
                for _ in &active {
                    nodes_per.push(NodeInputs::default());
                }
                base
            };
            let l = nets.ac.logits(&mut g, p, inputs)?;
            logits = Some(g.value(l).clone());
            if collect {
                let v = nets.ac.values(&mut g, p, inputs)?;
                values = Some(g.value(v).clone());
            }
        }

        for (k, &e) in active.iter().enumerate() {
            let comp = &specs[e].composition;
            let mut joint = vec![Action::Stay; n];
            let mut actions = vec![0usize; n];
            let mut log_probs = vec![0.0; n];
            match controller {
                Controller::Learned { .. } => {
                    let l = logits.as_ref().expect("learned controller has logits");
                    for i in 0..n {
                        if !comp.is_controlled(i) {
                            continue;
                        }
                        let dist = ActionDistribution::from_logits(l.row(k * n + i));
                        let a = if collect { dist.sample(&mut act_rngs[e]) } else { dist.greedy() };
                        actions[i] = a;
                        log_probs[i] = dist.log_prob(a);
                    }
                }
                Controller::Team(team) => {
                    let members = comp.controlled();
                    let a = team.act(&members, &obs[e], act_mode, &mut act_rngs[e])?;
                    for (&i, a) in members.iter().zip(a) {
                        actions[i] = a.index();
                    }
                }
            }
            for g in 1..=comp.m_groups() {
                let members = comp.members(g);
                let a = pool.policy(comp.policies[g - 1]).act(&members, &obs[e], act_mode, &mut team_rngs[e])?;
                for (&i, a) in members.iter().zip(a) {
                    actions[i] = a.index();
                }
            }
            for i in 0..n {
                joint[i] = Action::ALL[actions[i]];
            }
            let result = worlds[e].step(&joint)?;
            let out = &mut outcomes[e];
            out.team_return += result.reward;
            out.captures += usize::from(result.info.captured);
            out.steps += 1;
            if collect {
                let v = values.as_ref().expect("values are computed when collecting");
                records[e].push(StepRecord {
                    base: core::mem::take(&mut bases[k]),
                    actions: actions.clone(),
                    log_probs,
                    values: v.data()[k * n..(k + 1) * n].to_vec(),
                    reward: result.reward,
                    done: result.done,
                    nodes: core::mem::take(&mut nodes_per[k]),
                    observations: core::mem::replace(&mut obs[e], result.observations),
                });
            } else {
                obs[e] = result.observations;
            }
            for i in 0..n {
                prev[e][i] = Some(actions[i]);
            }
            done[e] = result.done;
        }
    }

    let batch = if collect {
        let nets = nets.expect("collecting requires networks");
        Some(assemble(nets, specs, records, gamma_lambda)?)
    } else {
        None
    };
    Ok(Rollouts { batch, outcomes })
}

fn assemble(
    nets: &Networks,
    specs: &[EpisodeSpec],
    records: Vec<Vec<StepRecord>>,
    (gamma, lambda): (f64, f64),
) -> Result<RolloutBatch> {
    let mut b = RolloutBatch { base_dim: nets.base_dim(), ..RolloutBatch::default() };
    for (e, steps) in records.into_iter().enumerate() {
        let comp = &specs[e].composition;
        let n = comp.n_total;
        let len = steps.len();
        let rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();
        let dones: Vec<bool> = steps.iter().map(|s| s.done).collect();
        let mut adv = vec![0.0; len * n];
        let mut ret = vec![0.0; len * n];
        for i in 0..n {
            let mut v: Vec<f64> = steps.iter().map(|s| s.values[i]).collect();
            v.push(0.0);
            let (a, r) = gae(&rewards, &v, &dones, gamma, lambda)?;
            for t in 0..len {
                adv[t * n + i] = a[t];
                ret[t * n + i] = r[t];
            }
        }
        if let Some(model) = &nets.agent_model {
            for i in comp.controlled() {
                let o: Vec<Observation> = steps.iter().map(|s| s.observations[i].clone()).collect();
                let own: Vec<usize> = steps.iter().map(|s| s.actions[i]).collect();
                let targets: Vec<Vec<usize>> = match model.config.target {
                    EdTarget::OwnAction => own.iter().map(|&a| vec![a]).collect(),
                    EdTarget::TeammateActions => steps.iter().map(|s| s.actions.clone()).collect(),
                };
                b.ed_sequences.push(model.sequence(&o, &own, &targets)?);
            }
        }
        let graph = b.graphs.len();
        b.graphs.push(specs[e].graph.clone());
        for (t, s) in steps.into_iter().enumerate() {
            b.units.push(Unit { row_start: b.actions.len(), n, graph, nodes: s.nodes });
            b.base.extend(s.base);
            b.actions.extend(s.actions);
            b.log_probs.extend(s.log_probs);
            b.values.extend(s.values);
            for i in 0..n {
                b.rewards.push(s.reward);
                b.dones.push(s.done);
                b.advantages.push(adv[t * n + i]);
                b.returns.push(ret[t * n + i]);
                b.controlled.push(comp.is_controlled(i));
            }
        }
    }
    b.validate()?;
    Ok(b)
}
