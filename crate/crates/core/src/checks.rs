//! Built-in numerical checks: finite-difference gradient checks for every
//! learned network, synthetic rollout batches and a scripted-teammate
//! dataset for fitting the agent model.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::agent_model::{AgentModel, AgentModelConfig, EdSequence};
use crate::env::{Action, EnvConfig, PredatorPrey, N_ACTIONS};
use crate::error::{config_err, Result};
use crate::numerics::gradcheck::{check_loss, GradCheckReport};
use crate::numerics::{Graph, ParameterSet};
use crate::policy::{losses, Features, Networks, PpoConfig, RolloutBatch, Unit};
use crate::rfm::{GraphBatch, NodeInputs, Rfm, RfmConfig};
use crate::rng::{self, Stream};
use crate::skeleton::build_skeleton;

/// Networks known to [`check_gradients`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkId {
    EncoderDecoder,
    RfmEdge,
    RfmNode,
    RfmGlobal,
    Actor,
    Critic,
}

impl NetworkId {
    pub const ALL: [NetworkId; 6] = [
        NetworkId::EncoderDecoder,
        NetworkId::RfmEdge,
        NetworkId::RfmNode,
        NetworkId::RfmGlobal,
        NetworkId::Actor,
        NetworkId::Critic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NetworkId::EncoderDecoder => "encoder_decoder",
            NetworkId::RfmEdge => "rfm_edge",
            NetworkId::RfmNode => "rfm_node",
            NetworkId::RfmGlobal => "rfm_global",
            NetworkId::Actor => "actor",
            NetworkId::Critic => "critic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|n| n.name() == s)
            .ok_or_else(|| config_err!("unknown network `{s}`; expected one of {}", Self::names().join(", ")))
    }

    pub fn names() -> Vec<&'static str> {
        Self::ALL.iter().map(|n| n.name()).collect()
    }
}

const OBS_DIM: usize = 7;
const N_AGENTS: usize = 5;
const N_CONTROLLED: usize = 2;

fn small_am() -> AgentModelConfig {
    AgentModelConfig { hidden_dim: 6, embed_dim: 4, ..Default::default() }
}

fn small_rfm() -> RfmConfig {
    RfmConfig { node_dim: 4, edge_dim: 3, global_dim: 3, hidden: 5, ..Default::default() }
}

/// Gradient check of `network` at `trials` independent random
/// initialisations and inputs derived from `seed`.
pub fn check_gradients(network: NetworkId, trials: usize, seed: u64) -> Result<GradCheckReport> {
    let mut report = GradCheckReport { network: network.name().to_string(), ..Default::default() };
    for trial in 0..trials as u64 {
        let s = rng::child_seed(seed, Stream::Init, trial);
        let errors = match network {
            NetworkId::EncoderDecoder => check_encoder_decoder(s)?,
            NetworkId::RfmEdge => check_rfm(s, "rfm.edge")?,
            NetworkId::RfmNode => check_rfm(s, "rfm.node")?,
            NetworkId::RfmGlobal => check_rfm(s, "rfm.global")?,
            NetworkId::Actor => check_policy(s, true)?,
            NetworkId::Critic => check_policy(s, false)?,
        };
        report.merge(&GradCheckReport { network: String::new(), trials: 1, max_rel_error: errors });
    }
    Ok(report)
}

fn check_encoder_decoder(seed: u64) -> Result<alloc::collections::BTreeMap<String, f64>> {
    let mut rng = rng::from_seed(seed);
    let am = AgentModel::new(&small_am(), OBS_DIM, N_ACTIONS, 1)?;
    let mut p = ParameterSet::new(seed);
    am.init(&mut p)?;
    let mut seqs = Vec::new();
    for len in [4usize, 2] {
        let obs: Vec<Vec<f64>> = (0..len).map(|_| (0..OBS_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let own: Vec<usize> = (0..len).map(|_| rng.gen_range(0..N_ACTIONS)).collect();
        let targets: Vec<Vec<usize>> = own.iter().map(|&a| vec![a]).collect();
        seqs.push(am.sequence(&obs, &own, &targets)?);
    }
    let refs: Vec<&EdSequence> = seqs.iter().collect();
    check_loss(&p, &["am."], |g, p| Ok(am.batch_loss(g, p, &refs)?.0))
}

/// Checks the parameters under `prefix` through two rounds of message
/// passing on a random skeleton, so every update feeds every other.
fn check_rfm(seed: u64, prefix: &str) -> Result<alloc::collections::BTreeMap<String, f64>> {
    let mut rng = rng::from_seed(seed);
    let rfm = Rfm::new(&small_rfm())?;
    let mut p = ParameterSet::new(seed);
    rfm.init(&mut p)?;
    let group_of = [0, 0, 1, 1, 2];
    let graph = build_skeleton(&group_of, 1, &mut rng)?;
    let batch = GraphBatch::single(&graph);
    let dv = rfm.config.node_dim;
    let nodes = NodeInputs {
        embeddings: (0..group_of.len() * dv).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        positions: (0..group_of.len() * 2).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        unknown: group_of.iter().map(|&k| if k == 0 { 0.0 } else { 1.0 }).collect(),
    };
    let width = rfm.config.output_dim();
    let weights: Vec<f64> = (0..group_of.len() * width).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let prefixes: Vec<&str> = if prefix == "rfm.node" { vec![prefix, "rfm.unknown", "rfm.pos_w"] } else { vec![prefix] };
    check_loss(&p, &prefixes, |g, p| {
        let out = rfm.embed(g, p, &batch, &nodes)?;
        let w = g.mul_const(out, weights.clone())?;
        Ok(g.sum(w))
    })
}

/// Actor or critic loss on a random batch, through the relational model.
/// Behaviour log-probabilities sit close to the current policy so no ratio
/// lies on a clipping kink.
fn check_policy(seed: u64, actor: bool) -> Result<alloc::collections::BTreeMap<String, f64>> {
    let features = Features { agent_model: true, rfm: true, sparse_skeleton: true };
    let ppo = PpoConfig { hidden: vec![8], ..Default::default() };
    let nets = Networks::new(features, OBS_DIM, N_AGENTS, &small_am(), &small_rfm(), &ppo)?;
    let mut p = ParameterSet::new(seed);
    nets.init(&mut p)?;
    let mut b = random_batch(&nets, 2, N_AGENTS, N_CONTROLLED, seed);
    let units = [0, 1];
    let mut g = Graph::inference();
    let inputs = nets.inputs(&mut g, &p, &b, &units)?;
    let logits = nets.ac.logits(&mut g, &p, inputs)?;
    let lp = g.log_softmax_rows(logits);
    let current = g.value(lp).clone();
    let mut rng = rng::from_seed(seed ^ 1);
    for i in 0..b.rows() {
        b.log_probs[i] = current.data()[i * N_ACTIONS + b.actions[i]] + rng.gen_range(-0.05..0.05);
    }
    if actor {
        check_loss(&p, &["pi", "rfm"], |g, p| Ok(losses(g, p, &nets, &b, &units, &ppo)?.actor))
    } else {
        check_loss(&p, &["vf", "rfm"], |g, p| Ok(losses(g, p, &nets, &b, &units, &ppo)?.critic))
    }
}

/// Random batch of `units` timesteps with `n` agents, the first `ctrl` of
/// them controlled, shaped for `nets`.
pub fn random_batch(nets: &Networks, units: usize, n: usize, ctrl: usize, seed: u64) -> RolloutBatch {
    let mut rng = rng::from_seed(seed);
    let d = nets.base_dim();
    let mut b = RolloutBatch { base_dim: d, ..RolloutBatch::default() };
    let group_of: Vec<usize> = (0..n).map(|i| if i < ctrl { 0 } else { 1 + (i - ctrl) % 2 }).collect();
    b.graphs.push(build_skeleton(&group_of, 1, &mut rng).expect("valid partition"));
    for u in 0..units {
        let mut nodes = NodeInputs::default();
        if let Some(rfm) = &nets.rfm {
            let dv = rfm.config.node_dim;
            for i in 0..n {
                let c = i < ctrl;
                nodes.embeddings.extend((0..dv).map(|_| if c { rng.gen_range(-1.0..1.0) } else { 0.0 }));
                nodes.positions.extend((0..2).map(|_| if c { 0.0 } else { rng.gen_range(-1.0..1.0) }));
                nodes.unknown.push(if c { 0.0 } else { 1.0 });
            }
        }
        b.units.push(Unit { row_start: u * n, n, graph: 0, nodes });
        for i in 0..n {
            b.base.extend((0..d).map(|_| rng.gen_range(-1.0..1.0)));
            b.actions.push(rng.gen_range(0..N_ACTIONS));
            b.log_probs.push(rng.gen_range(-2.5..-0.5));
            b.values.push(rng.gen_range(-1.0..1.0));
            b.rewards.push(rng.gen_range(-1.0..1.0));
            b.dones.push(false);
            b.advantages.push(rng.gen_range(-1.0..1.0));
            b.returns.push(rng.gen_range(-1.0..1.0));
            b.controlled.push(i < ctrl);
        }
    }
    b
}

/// Probability that a scripted teammate takes its greedy move.
pub const SCRIPTED_GREEDY: f64 = 0.8;

/// Entropy in nats of the scripted teammate's action distribution: the
/// greedy move with `SCRIPTED_GREEDY`, otherwise uniform over all moves.
pub fn scripted_entropy() -> f64 {
    let other = (1.0 - SCRIPTED_GREEDY) / N_ACTIONS as f64;
    let top = SCRIPTED_GREEDY + other;
    -(top * libm::log(top)) - (N_ACTIONS - 1) as f64 * other * libm::log(other)
}

/// The move that most shortens the larger axis of the offset to the prey,
/// rows before columns on ties, `Stay` when on the prey.
pub fn greedy_move(obs: &[f64]) -> Action {
    let (dr, dc) = (obs[2], obs[3]);
    if dr == 0.0 && dc == 0.0 {
        Action::Stay
    } else if libm::fabs(dr) >= libm::fabs(dc) {
        if dr < 0.0 {
            Action::Up
        } else {
            Action::Down
        }
    } else if dc < 0.0 {
        Action::Left
    } else {
        Action::Right
    }
}

/// Own-action sequences of `episodes` predator–prey episodes in which every
/// agent is a scripted teammate.
pub fn scripted_dataset(env: &EnvConfig, model: &AgentModel, episodes: usize, seed: u64) -> Result<Vec<EdSequence>> {
    let mut rng = rng::stream(seed, Stream::Uncontrolled, 0);
    let mut out = Vec::new();
    for ep in 0..episodes as u64 {
        let (mut world, mut obs) = PredatorPrey::reset(env, rng::child_seed(seed, Stream::EnvReset, ep))?;
        let n = env.n_agents;
        let mut seen: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n];
        let mut acts: Vec<Vec<usize>> = vec![Vec::new(); n];
        loop {
            let actions: Vec<Action> = obs
                .iter()
                .map(|o| {
                    if rng.gen::<f64>() < SCRIPTED_GREEDY {
                        greedy_move(o)
                    } else {
                        Action::ALL[rng.gen_range(0..N_ACTIONS)]
                    }
                })
                .collect();
            for i in 0..n {
                seen[i].push(obs[i].clone());
                acts[i].push(actions[i].index());
            }
            let step = world.step(&actions)?;
            obs = step.observations;
            if step.done {
                break;
            }
        }
        for i in 0..n {
            let targets: Vec<Vec<usize>> = acts[i].iter().map(|&a| vec![a]).collect();
            out.push(model.sequence(&seen[i], &acts[i], &targets)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_network_passes_one_trial() {
        for id in NetworkId::ALL {
            let r = check_gradients(id, 1, 3).unwrap();
            assert_eq!(r.trials, 1);
            assert!(!r.max_rel_error.is_empty(), "{}", id.name());
            assert!(r.worst() < 1e-4, "{}: {:?}", id.name(), r.max_rel_error);
        }
    }

    #[test]
    fn network_names_round_trip() {
        for id in NetworkId::ALL {
            assert_eq!(NetworkId::parse(id.name()).unwrap(), id);
        }
        assert!(matches!(NetworkId::parse("nope"), Err(crate::Error::Config(m)) if m.contains("nope")));
    }

    #[test]
    fn scripted_entropy_matches_the_closed_form() {
        let e = -(0.84f64 * 0.84f64.ln()) - 4.0 * 0.04 * 0.04f64.ln();
        assert!((scripted_entropy() - e).abs() < 1e-12);
    }

    #[test]
    fn greedy_move_closes_the_gap() {
        assert_eq!(greedy_move(&[0.0, 0.0, -0.5, 0.25]), Action::Up);
        assert_eq!(greedy_move(&[0.0, 0.0, 0.25, -0.5]), Action::Left);
        assert_eq!(greedy_move(&[0.0, 0.0, 0.5, 0.5]), Action::Down);
        assert_eq!(greedy_move(&[0.0, 0.0, 0.0, 0.0]), Action::Stay);
    }
}
