//! Actor–critic trained with independent PPO and full parameter sharing.
//!
//! Every row of a [`RolloutBatch`] is one agent at one timestep. The actor
//! learns from controlled rows only; the critic from every row. Rows are
//! grouped into units (one episode timestep, all agents), which is also the
//! granularity at which the relational model is recomputed during updates.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::agent_model::{AgentModel, AgentModelConfig, EdSequence};
use crate::env::N_ACTIONS;
use crate::error::{config_err, usage_err, Error, Result};
use crate::numerics::layers::Mlp;
use crate::numerics::optim::{clip_grad_norm, Adam};
use crate::numerics::{log_softmax, softmax, Graph, ParameterSet, Var};
use crate::rfm::{GraphBatch, NodeInputs, Rfm, RfmConfig};
use crate::rng::Rng;
use crate::skeleton::SkeletonGraph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub clip: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Weight of the encoder–decoder loss in the joint objective.
    pub ed_coef: f64,
    pub max_grad_norm: f64,
    pub lr: f64,
    /// Learning rate per module (`pi`, `vf`, `am`, `rfm`), overriding `lr`.
    pub module_lr: BTreeMap<String, f64>,
    /// Hidden widths of the actor and of the critic.
    pub hidden: Vec<usize>,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            epochs: 4,
            minibatches: 4,
            gamma: 0.99,
            lambda: 0.95,
            entropy_coef: 0.01,
            value_coef: 0.5,
            ed_coef: 1.0,
            max_grad_norm: 0.5,
            lr: 5e-4,
            module_lr: BTreeMap::new(),
            hidden: vec![64],
            normalize_advantages: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return Err(config_err!("ppo.gamma and ppo.lambda must lie in [0, 1]"));
        }
        if !(self.clip > 0.0) {
            return Err(config_err!("ppo.clip must be positive"));
        }
        if self.epochs < 1 || self.minibatches < 1 {
            return Err(config_err!("ppo.epochs and ppo.minibatches must be at least 1"));
        }
        if !(self.lr >= 0.0) || self.module_lr.values().any(|lr| !(*lr >= 0.0)) {
            return Err(config_err!("learning rates must be nonnegative"));
        }
        if let Some(k) = self.module_lr.keys().find(|k| !["pi", "vf", "am", "rfm"].contains(&k.as_str())) {
            return Err(config_err!("ppo.module_lr.{k}: unknown module (expected pi, vf, am or rfm)"));
        }
        if !(self.max_grad_norm > 0.0) {
            return Err(config_err!("ppo.max_grad_norm must be positive"));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> Adam {
        self.module_lr.iter().fold(Adam::new(self.lr), |opt, (m, lr)| opt.with_module_lr(m, *lr))
    }
}

/// Categorical distribution over the action set.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    pub probs: Vec<f64>,
    log_probs: Vec<f64>,
}

impl ActionDistribution {
    pub fn from_logits(logits: &[f64]) -> Self {
        Self { probs: softmax(logits), log_probs: log_softmax(logits) }
    }

    pub fn log_prob(&self, action: usize) -> f64 {
        self.log_probs[action]
    }

    pub fn sample(&self, rng: &mut Rng) -> usize {
        crate::teams::sample_index(&self.probs, rng)
    }

    /// Most likely action; ties go to the lowest index.
    pub fn greedy(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn entropy(&self) -> f64 {
        -self.probs.iter().zip(&self.log_probs).map(|(p, lp)| if *p > 0.0 { p * lp } else { 0.0 }).sum::<f64>()
    }
}

/// Actor `pi` and critic `vf` over the same input row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorCritic {
    pub input_dim: usize,
    actor: Mlp,
    critic: Mlp,
}

impl ActorCritic {
    pub fn new(input_dim: usize, hidden: &[usize]) -> Self {
        Self {
            input_dim,
            actor: Mlp::new("pi", input_dim, hidden, N_ACTIONS, false),
            critic: Mlp::new("vf", input_dim, hidden, 1, false),
        }
    }

    pub fn init(&self, params: &mut ParameterSet) -> Result<()> {
        self.actor.init(params)?;
        self.critic.init(params)
    }

    pub fn logits(&self, g: &mut Graph, p: &ParameterSet, x: Var) -> Result<Var> {
        self.actor.forward(g, p, x)
    }

    pub fn values(&self, g: &mut Graph, p: &ParameterSet, x: Var) -> Result<Var> {
        self.critic.forward(g, p, x)
    }

    /// Samples (or, if `greedy`, takes the argmax) for one input row.
    /// Returns `(action, log-prob, value)`.
    pub fn act(&self, input: &[f64], p: &ParameterSet, rng: &mut Rng, greedy: bool) -> Result<(usize, f64, f64)> {
        if input.len() != self.input_dim {
            return Err(config_err!("policy input width {} != {}", input.len(), self.input_dim));
        }
        let mut g = Graph::inference();
        let x = g.row(input.to_vec());
        let l = self.logits(&mut g, p, x)?;
        let v = self.values(&mut g, p, x)?;
        let dist = ActionDistribution::from_logits(g.value(l).data());
        let a = if greedy { dist.greedy() } else { dist.sample(rng) };
        Ok((a, dist.log_prob(a), g.scalar(v)))
    }
}

/// Generalised advantage estimation over one sequence. `values` carries one
/// bootstrap entry past the end; `dones[t]` cuts the recursion after `t`.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n + 1 || dones.len() != n {
        return Err(usage_err!(
            "gae needs aligned sequences: {} rewards, {} values, {} dones",
            n,
            values.len(),
            dones.len()
        ));
    }
    let mut adv = vec![0.0; n];
    let mut next = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * live - values[t];
        next = delta + gamma * lambda * live * next;
        adv[t] = next;
    }
    let targets = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, targets))
}

/// All agents of one episode timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub row_start: usize,
    pub n: usize,
    /// Index into [`RolloutBatch::graphs`].
    pub graph: usize,
    /// Relational-model node inputs; empty when the model is off.
    pub nodes: NodeInputs,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RolloutBatch {
    /// Width of each stored input row (observation plus agent embedding).
    pub base_dim: usize,
    pub base: Vec<f64>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub controlled: Vec<bool>,
    pub units: Vec<Unit>,
    pub graphs: Vec<SkeletonGraph>,
    /// Controlled agents' episodes for the encoder–decoder loss.
    pub ed_sequences: Vec<EdSequence>,
}

impl RolloutBatch {
    pub fn rows(&self) -> usize {
        self.actions.len()
    }

    pub fn base_row(&self, i: usize) -> &[f64] {
        &self.base[i * self.base_dim..(i + 1) * self.base_dim]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.rows();
        let lens = [
            self.log_probs.len(),
            self.values.len(),
            self.rewards.len(),
            self.dones.len(),
            self.advantages.len(),
            self.returns.len(),
            self.controlled.len(),
        ];
        if lens.iter().any(|&l| l != n) || self.base.len() != n * self.base_dim {
            return Err(usage_err!("rollout batch columns are misaligned"));
        }
        let mut next = 0;
        for u in &self.units {
            if u.row_start != next || u.graph >= self.graphs.len() || self.graphs[u.graph].n != u.n {
                return Err(usage_err!("rollout units do not tile the rows"));
            }
            next += u.n;
        }
        if next != n {
            return Err(usage_err!("rollout units do not tile the rows"));
        }
        Ok(())
    }
}

/// Which learned stages are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Features {
    pub agent_model: bool,
    pub rfm: bool,
    pub sparse_skeleton: bool,
}

/// The controlled agents' networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Networks {
    pub obs_dim: usize,
    pub ac: ActorCritic,
    pub agent_model: Option<AgentModel>,
    pub rfm: Option<Rfm>,
}

impl Networks {
    pub fn new(
        features: Features,
        obs_dim: usize,
        n_agents: usize,
        am: &AgentModelConfig,
        rfm: &RfmConfig,
        ppo: &PpoConfig,
    ) -> Result<Self> {
        let agent_model =
            if features.agent_model { Some(AgentModel::new(am, obs_dim, N_ACTIONS, n_agents)?) } else { None };
        let rfm = if features.rfm {
            rfm.validate()?;
            if features.agent_model && am.embed_dim != rfm.node_dim {
                return Err(config_err!(
                    "agent_model.embed_dim ({}) must equal rfm.node_dim ({}): controlled nodes start from their embedding",
                    am.embed_dim,
                    rfm.node_dim
                ));
            }
            Some(Rfm::new(rfm)?)
        } else {
            None
        };
        let base = obs_dim + agent_model.as_ref().map_or(0, |m| m.embed_dim());
        let input = base + rfm.as_ref().map_or(0, |r| r.config.output_dim());
        Ok(Self { obs_dim, ac: ActorCritic::new(input, &ppo.hidden), agent_model, rfm })
    }

    pub fn init(&self, params: &mut ParameterSet) -> Result<()> {
        self.ac.init(params)?;
        if let Some(m) = &self.agent_model {
            m.init(params)?;
        }
        if let Some(r) = &self.rfm {
            r.init(params)?;
        }
        Ok(())
    }

    pub fn base_dim(&self) -> usize {
        self.obs_dim + self.agent_model.as_ref().map_or(0, |m| m.embed_dim())
    }

    pub fn features(&self) -> Features {
        Features {
            agent_model: self.agent_model.is_some(),
            rfm: self.rfm.is_some(),
            sparse_skeleton: false,
        }
    }

    /// Policy inputs for the rows of `units`, in unit order.
    pub fn inputs(&self, g: &mut Graph, p: &ParameterSet, batch: &RolloutBatch, units: &[usize]) -> Result<Var> {
        let rows: usize = units.iter().map(|&u| batch.units[u].n).sum();
        let d = batch.base_dim;
        if d != self.base_dim() {
            return Err(config_err!("batch rows of width {d} for networks expecting {}", self.base_dim()));
        }
        let mut data = Vec::with_capacity(rows * d);
        for &u in units {
            let unit = &batch.units[u];
            data.extend_from_slice(&batch.base[unit.row_start * d..(unit.row_start + unit.n) * d]);
        }
        let base = g.matrix(rows, d, data);
        let Some(rfm) = &self.rfm else { return Ok(base) };
        let mut gb = GraphBatch::default();
        let mut nodes = NodeInputs::default();
        for &u in units {
            gb.push(&batch.graphs[batch.units[u].graph]);
            nodes.extend(&batch.units[u].nodes);
        }
        let z = rfm.embed(g, p, &gb, &nodes)?;
        g.concat_cols(&[base, z])
    }
}

fn unit_rows(batch: &RolloutBatch, units: &[usize]) -> Vec<usize> {
    units.iter().flat_map(|&u| batch.units[u].row_start..batch.units[u].row_start + batch.units[u].n).collect()
}

/// Loss nodes for one set of units.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    /// Clipped surrogate minus the entropy bonus, controlled rows only.
    pub actor: Var,
    pub critic: Var,
    pub entropy: Var,
}

/// `−mean(min(ρA, clip(ρ, 1−ε, 1+ε)A)) − c_H · H` over controlled rows.
pub fn actor_loss_from(
    g: &mut Graph,
    p: &ParameterSet,
    nets: &Networks,
    batch: &RolloutBatch,
    rows: &[usize],
    inputs: Var,
    cfg: &PpoConfig,
) -> Result<(Var, Var)> {
    let local: Vec<usize> = (0..rows.len()).filter(|&k| batch.controlled[rows[k]]).collect();
    if local.is_empty() {
        return Err(usage_err!("actor loss needs at least one controlled transition"));
    }
    let ctrl: Vec<usize> = local.iter().map(|&k| rows[k]).collect();
    let x = g.gather_rows(inputs, &local)?;
    let logits = nets.ac.logits(g, p, x)?;
    let lp = g.log_softmax_rows(logits);
    let actions: Vec<usize> = ctrl.iter().map(|&i| batch.actions[i]).collect();
    let picked = g.pick_cols(lp, &actions)?;
    let old = g.matrix(ctrl.len(), 1, ctrl.iter().map(|&i| batch.log_probs[i]).collect());
    let diff = g.sub(picked, old)?;
    let ratio = g.exp(diff);
    let adv = advantages_for(batch, &ctrl, cfg.normalize_advantages);
    let clipped = g.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
    let s1 = g.mul_const(ratio, adv.clone())?;
    let s2 = g.mul_const(clipped, adv)?;
    let m = g.min(s1, s2)?;
    let surrogate = g.mean(m);
    let probs = g.exp(lp);
    let plogp = g.mul(probs, lp)?;
    let plogp = g.row_sum(plogp);
    let neg_entropy = g.mean(plogp);
    let entropy = g.scale(neg_entropy, -1.0);
    // −surrogate − c·H
    let a = g.scale(surrogate, -1.0);
    let b = g.scale(neg_entropy, cfg.entropy_coef);
    Ok((g.add(a, b)?, entropy))
}

/// Advantages of `rows`, standardised over exactly those rows.
pub fn advantages_for(batch: &RolloutBatch, rows: &[usize], normalize: bool) -> Vec<f64> {
    let adv: Vec<f64> = rows.iter().map(|&i| batch.advantages[i]).collect();
    if !normalize || adv.len() < 2 {
        return adv;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = libm::sqrt(var) + 1e-8;
    adv.iter().map(|a| (a - mean) / std).collect()
}

/// `mean ½(V − V̂)²` over every row.
pub fn critic_loss_from(
    g: &mut Graph,
    p: &ParameterSet,
    nets: &Networks,
    batch: &RolloutBatch,
    rows: &[usize],
    inputs: Var,
) -> Result<Var> {
    if rows.is_empty() {
        return Err(usage_err!("critic loss on an empty batch"));
    }
    let v = nets.ac.values(g, p, inputs)?;
    let target = g.matrix(rows.len(), 1, rows.iter().map(|&i| batch.returns[i]).collect());
    let d = g.sub(v, target)?;
    let sq = g.square(d);
    let m = g.mean(sq);
    Ok(g.scale(m, 0.5))
}

pub fn losses(
    g: &mut Graph,
    p: &ParameterSet,
    nets: &Networks,
    batch: &RolloutBatch,
    units: &[usize],
    cfg: &PpoConfig,
) -> Result<LossVars> {
    let rows = unit_rows(batch, units);
    let inputs = nets.inputs(g, p, batch, units)?;
    let (actor, entropy) = actor_loss_from(g, p, nets, batch, &rows, inputs, cfg)?;
    let critic = critic_loss_from(g, p, nets, batch, &rows, inputs)?;
    Ok(LossVars { actor, critic, entropy })
}

fn all_units(batch: &RolloutBatch) -> Vec<usize> {
    (0..batch.units.len()).collect()
}

/// Actor loss value over the whole batch.
pub fn actor_loss(nets: &Networks, p: &ParameterSet, batch: &RolloutBatch, cfg: &PpoConfig) -> Result<f64> {
    let mut g = Graph::inference();
    let l = losses(&mut g, p, nets, batch, &all_units(batch), cfg)?;
    Ok(g.scalar(l.actor))
}

/// Critic loss value over the whole batch.
pub fn critic_loss(nets: &Networks, p: &ParameterSet, batch: &RolloutBatch) -> Result<f64> {
    let units = all_units(batch);
    let rows = unit_rows(batch, &units);
    let mut g = Graph::inference();
    let inputs = nets.inputs(&mut g, p, batch, &units)?;
    let l = critic_loss_from(&mut g, p, nets, batch, &rows, inputs)?;
    Ok(g.scalar(l))
}

/// Gradient of the actor loss alone, for every parameter.
pub fn actor_gradients(
    nets: &Networks,
    p: &ParameterSet,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
) -> Result<BTreeMap<String, crate::numerics::Tensor>> {
    let mut g = Graph::new();
    let l = losses(&mut g, p, nets, batch, &all_units(batch), cfg)?;
    Ok(g.backward(l.actor)?.param_grads())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub ed_loss: f64,
    pub ed_reconstruction: f64,
    pub ed_action: f64,
    pub entropy: f64,
    pub grad_norm: f64,
}

/// `epochs` passes of shuffled minibatch steps on the joint loss
/// `actor + c_V · critic + c_ED · ED`.
pub fn update(
    nets: &Networks,
    params: &mut ParameterSet,
    opt: &mut Adam,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
    rng: &mut Rng,
) -> Result<UpdateStats> {
    batch.validate()?;
    if batch.units.is_empty() {
        return Err(usage_err!("update on an empty batch"));
    }
    let mut stats = UpdateStats::default();
    let mut steps = 0usize;
    let mut ed_steps = 0usize;
    let n_mb = cfg.minibatches.min(batch.units.len());
    for _ in 0..cfg.epochs {
        let mut units = all_units(batch);
        units.shuffle(rng);
        let mut seqs: Vec<usize> = (0..batch.ed_sequences.len()).collect();
        seqs.shuffle(rng);
        for k in 0..n_mb {
            let mb: Vec<usize> = chunk(&units, n_mb, k).to_vec();
            let mut g = Graph::new();
            let l = losses(&mut g, params, nets, batch, &mb, cfg)?;
            let vc = g.scale(l.critic, cfg.value_coef);
            let mut total = g.add(l.actor, vc)?;
            let mut ed = None;
            if let Some(model) = &nets.agent_model {
                let s = chunk(&seqs, n_mb, k);
                if !s.is_empty() {
                    let refs: Vec<&EdSequence> = s.iter().map(|&i| &batch.ed_sequences[i]).collect();
                    let (et, er, ea) = model.batch_loss(&mut g, params, &refs)?;
                    let scaled = g.scale(et, cfg.ed_coef);
                    total = g.add(total, scaled)?;
                    ed = Some((g.scalar(et), g.scalar(er), g.scalar(ea)));
                }
            }
            let value = g.scalar(total);
            if !value.is_finite() {
                return Err(Error::Numerical(alloc::format!(
                    "non-finite loss (actor {}, critic {})",
                    g.scalar(l.actor),
                    g.scalar(l.critic)
                )));
            }
            let mut grads = g.backward(total)?.param_grads();
            let norm = clip_grad_norm(&mut grads, cfg.max_grad_norm);
            if !norm.is_finite() {
                return Err(Error::Numerical(alloc::format!("non-finite gradient norm")));
            }
            opt.apply(params, &grads)?;
            stats.actor_loss += g.scalar(l.actor);
            stats.critic_loss += g.scalar(l.critic);
            stats.entropy += g.scalar(l.entropy);
            stats.grad_norm += norm;
            steps += 1;
            if let Some((t, r, a)) = ed {
                stats.ed_loss += t;
                stats.ed_reconstruction += r;
                stats.ed_action += a;
                ed_steps += 1;
            }
        }
    }
    let s = steps as f64;
    stats.actor_loss /= s;
    stats.critic_loss /= s;
    stats.entropy /= s;
    stats.grad_norm /= s;
    if ed_steps > 0 {
        let e = ed_steps as f64;
        stats.ed_loss /= e;
        stats.ed_reconstruction /= e;
        stats.ed_action /= e;
    }
    Ok(stats)
}

/// The `k`-th of `n` nearly equal contiguous chunks.
fn chunk<T>(items: &[T], n: usize, k: usize) -> &[T] {
    let len = items.len();
    &items[k * len / n..(k + 1) * len / n]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checks::random_batch;
    use crate::numerics::gradcheck::check_loss;
    use crate::rng;
    use alloc::string::ToString;
    use rand::Rng as _;

    #[test]
    fn distribution_contracts() {
        let d = ActionDistribution::from_logits(&[0.0; 5]);
        assert!(d.probs.iter().all(|p| (p - 0.2).abs() < 1e-15));
        assert_eq!(d.greedy(), 0);
        let d = ActionDistribution::from_logits(&[0.3, -1.0, 2.0, 0.0, 1.1]);
        let mut r = rng::from_seed(0);
        for _ in 0..50 {
            let a = d.sample(&mut r);
            assert!((libm::exp(d.log_prob(a)) - d.probs[a]).abs() < 1e-12);
        }
        assert_eq!(d.greedy(), 2);
        assert!(d.entropy() > 0.0);
    }

    #[test]
    fn greedy_act_is_deterministic() {
        let ac = ActorCritic::new(4, &[8]);
        let mut p = ParameterSet::new(1);
        ac.init(&mut p).unwrap();
        let mut r = rng::from_seed(0);
        let a = ac.act(&[0.1, 0.2, 0.3, 0.4], &p, &mut r, true).unwrap();
        let b = ac.act(&[0.1, 0.2, 0.3, 0.4], &p, &mut rng::from_seed(9), true).unwrap();
        assert_eq!(a, b);
        assert!(ac.act(&[0.1], &p, &mut r, true).is_err());
    }

    fn recursive_advantage(r: &[f64], v: &[f64], d: &[bool], g: f64, l: f64, t: usize) -> f64 {
        if t == r.len() {
            return 0.0;
        }
        let live = if d[t] { 0.0 } else { 1.0 };
        let delta = r[t] + g * v[t + 1] * live - v[t];
        delta + g * l * live * recursive_advantage(r, v, d, g, l, t + 1)
    }

    #[test]
    fn gae_cases() {
        let r = [1.0, 0.0, 2.0];
        let v = [0.5, 0.2, -0.1, 0.7];
        let d = [false, true, false];
        let (a, t) = gae(&r, &v, &d, 0.9, 0.0).unwrap();
        for i in 0..3 {
            let live = if d[i] { 0.0 } else { 1.0 };
            assert_eq!(a[i], r[i] + 0.9 * v[i + 1] * live - v[i]);
            assert_eq!(t[i], a[i] + v[i]);
        }
        let (a, _) = gae(&r, &[0.0; 4], &[false; 3], 1.0, 1.0).unwrap();
        assert_eq!(a, vec![3.0, 2.0, 2.0]);
        assert!(matches!(gae(&r, &v[..3], &d, 0.9, 0.9), Err(Error::Usage(_))));

        let mut rng = rng::from_seed(3);
        for _ in 0..200 {
            let r: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let d: Vec<bool> = (0..6).map(|_| rng.gen_bool(0.2)).collect();
            let (g, l) = (rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0));
            let (a, _) = gae(&r, &v, &d, g, l).unwrap();
            for t in 0..6 {
                assert!((a[t] - recursive_advantage(&r, &v, &d, g, l, t)).abs() < 1e-12);
            }
        }
    }

    pub(crate) fn nets(features: Features, obs_dim: usize, n: usize) -> (Networks, ParameterSet) {
        let am = AgentModelConfig { hidden_dim: 6, embed_dim: 4, ..Default::default() };
        let rfm = RfmConfig { node_dim: 4, edge_dim: 3, global_dim: 3, hidden: 5, ..Default::default() };
        let ppo = PpoConfig { hidden: vec![8], ..Default::default() };
        let nets = Networks::new(features, obs_dim, n, &am, &rfm, &ppo).unwrap();
        let mut p = ParameterSet::new(5);
        nets.init(&mut p).unwrap();
        (nets, p)
    }

    const FULL: Features = Features { agent_model: true, rfm: true, sparse_skeleton: true };

    #[test]
    fn critic_loss_arithmetic() {
        let (nets, mut p) = nets(Features { agent_model: false, rfm: false, sparse_skeleton: false }, 3, 1);
        p.zero_prefix("vf");
        p.get_mut("vf.l1.b").unwrap().data_mut()[0] = 1.0;
        let mut b = random_batch(&nets, 1, 1, 1, 0);
        b.returns[0] = 3.0;
        assert_eq!(critic_loss(&nets, &p, &b).unwrap(), 2.0);
        b.returns[0] = 1.0;
        assert_eq!(critic_loss(&nets, &p, &b).unwrap(), 0.0);
    }

    #[test]
    fn surrogate_at_unit_ratio_is_negative_mean_advantage() {
        let (nets, p) = nets(Features { agent_model: false, rfm: false, sparse_skeleton: false }, 3, 3);
        let mut b = random_batch(&nets, 4, 3, 2, 1);
        let mut g = Graph::inference();
        let x = g.matrix(b.rows(), 3, b.base.clone());
        let l = nets.ac.logits(&mut g, &p, x).unwrap();
        for i in 0..b.rows() {
            b.log_probs[i] = log_softmax(g.value(l).row(i))[b.actions[i]];
        }
        let cfg = PpoConfig { entropy_coef: 0.0, normalize_advantages: false, ..Default::default() };
        let ctrl: Vec<usize> = (0..b.rows()).filter(|&i| b.controlled[i]).collect();
        let mean_adv = ctrl.iter().map(|&i| b.advantages[i]).sum::<f64>() / ctrl.len() as f64;
        assert!((actor_loss(&nets, &p, &b, &cfg).unwrap() + mean_adv).abs() < 1e-12);
    }

    #[test]
    fn clip_arithmetic() {
        // ρ = 1.5, ε = 0.2, A = 1: min(1.5, 1.2) = 1.2
        let (nets, mut p) = nets(Features { agent_model: false, rfm: false, sparse_skeleton: false }, 3, 1);
        p.zero_prefix("pi");
        let mut b = random_batch(&nets, 1, 1, 1, 2);
        b.log_probs[0] = libm::log(0.2 / 1.5);
        b.advantages[0] = 1.0;
        let cfg = PpoConfig { entropy_coef: 0.0, normalize_advantages: false, ..Default::default() };
        assert!((actor_loss(&nets, &p, &b, &cfg).unwrap() + 1.2).abs() < 1e-12);
    }

    fn perturb_uncontrolled(b: &mut RolloutBatch, rng: &mut Rng) {
        for i in 0..b.rows() {
            if b.controlled[i] {
                continue;
            }
            let d = b.base_dim;
            for x in &mut b.base[i * d..(i + 1) * d] {
                *x += rng.gen_range(-0.5..0.5);
            }
            b.actions[i] = rng.gen_range(0..N_ACTIONS);
            b.log_probs[i] -= 0.3;
            b.advantages[i] += rng.gen_range(-2.0..2.0);
            b.returns[i] += rng.gen_range(0.5..2.0);
            b.values[i] += 1.0;
        }
    }

    #[test]
    fn actor_gradient_ignores_uncontrolled_rows() {
        let (nets, p) = nets(FULL, 7, 5);
        let cfg = PpoConfig::default();
        let mut rng = rng::from_seed(10);
        for seed in 0..5 {
            let b = random_batch(&nets, 3, 5, 2, seed);
            let mut c = b.clone();
            perturb_uncontrolled(&mut c, &mut rng);
            assert_eq!(actor_gradients(&nets, &p, &b, &cfg).unwrap(), actor_gradients(&nets, &p, &c, &cfg).unwrap());
            assert_ne!(critic_loss(&nets, &p, &b).unwrap(), critic_loss(&nets, &p, &c).unwrap());
        }
    }

    #[test]
    fn policy_loss_never_reaches_the_encoder() {
        let (nets, p) = nets(FULL, 7, 5);
        let b = random_batch(&nets, 2, 5, 2, 4);
        let mut g = Graph::new();
        let l = losses(&mut g, &p, &nets, &b, &[0, 1], &PpoConfig::default()).unwrap();
        let s = g.add(l.actor, l.critic).unwrap();
        let grads = g.backward(s).unwrap().param_grads();
        for (name, t) in &grads {
            if name.starts_with("am.") {
                assert!(t.data().iter().all(|x| *x == 0.0), "{name}");
            }
        }
        assert!(grads["rfm.edge.l0.w"].data().iter().any(|x| *x != 0.0));
    }

    #[test]
    fn critic_uses_uncontrolled_rows() {
        let (nets, p) = nets(Features { agent_model: true, rfm: false, sparse_skeleton: false }, 7, 4);
        let b = random_batch(&nets, 3, 4, 2, 6);
        let with = critic_loss(&nets, &p, &b).unwrap();
        // drop the uncontrolled rows: a batch of 3 units with 2 agents each
        let mut only = RolloutBatch { base_dim: b.base_dim, ..RolloutBatch::default() };
        only.graphs.push(crate::skeleton::build_full_graph(2));
        for u in 0..3 {
            only.units.push(Unit { row_start: 2 * u, n: 2, graph: 0, nodes: NodeInputs::default() });
            for i in 0..2 {
                let r = u * 4 + i;
                only.base.extend_from_slice(b.base_row(r));
                only.returns.push(b.returns[r]);
                for (dst, src) in [(&mut only.values, &b.values), (&mut only.log_probs, &b.log_probs)] {
                    dst.push(src[r]);
                }
                only.rewards.push(0.0);
                only.advantages.push(0.0);
                only.actions.push(0);
                only.dones.push(false);
                only.controlled.push(true);
            }
        }
        assert_ne!(with, critic_loss(&nets, &p, &only).unwrap());
    }

    #[test]
    fn clipped_surrogate_is_below_unclipped() {
        let mut rng = rng::from_seed(12);
        for _ in 0..10_000 {
            let rho: f64 = rng.gen_range(0.0..3.0);
            let a: f64 = rng.gen_range(-3.0..3.0);
            let clipped = rho.clamp(0.8, 1.2) * a;
            assert!((rho * a).min(clipped) <= rho * a);
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (nets, p) = nets(FULL, 7, 5);
        let b = random_batch(&nets, 4, 5, 2, 7);
        let mut q = p.clone();
        let cfg = PpoConfig { lr: 0.0, epochs: 2, minibatches: 2, ..Default::default() };
        let mut opt = cfg.optimizer();
        let stats = update(&nets, &mut q, &mut opt, &b, &cfg, &mut rng::from_seed(0)).unwrap();
        assert_eq!(p, q);
        assert!(stats.grad_norm > 0.0 && stats.entropy > 0.0);
    }

    #[test]
    fn full_batch_step_lowers_critic_loss() {
        let (nets, p) = nets(Features { agent_model: false, rfm: true, sparse_skeleton: true }, 7, 5);
        let b = random_batch(&nets, 4, 5, 2, 8);
        let before = critic_loss(&nets, &p, &b).unwrap();
        let mut q = p.clone();
        let cfg = PpoConfig { lr: 1e-3, epochs: 1, minibatches: 1, ..Default::default() };
        update(&nets, &mut q, &mut cfg.optimizer(), &b, &cfg, &mut rng::from_seed(0)).unwrap();
        assert!(critic_loss(&nets, &p, &b).unwrap() == before);
        assert!(critic_loss(&nets, &q, &b).unwrap() <= before);
    }

    #[test]
    fn actor_and_critic_gradients_match_finite_differences() {
        let (nets, p) = nets(FULL, 7, 5);
        let b = random_batch(&nets, 2, 5, 3, 9);
        let cfg = PpoConfig::default();
        let units = [0, 1];
        let actor = check_loss(&p, &["pi", "rfm"], |g, p| Ok(losses(g, p, &nets, &b, &units, &cfg)?.actor)).unwrap();
        let critic = check_loss(&p, &["vf", "rfm"], |g, p| Ok(losses(g, p, &nets, &b, &units, &cfg)?.critic)).unwrap();
        for (name, e) in actor.iter().chain(&critic) {
            assert!(*e < 1e-4, "{name}: {e}");
        }
    }

    #[test]
    fn mismatched_embedding_widths_are_rejected() {
        let am = AgentModelConfig { embed_dim: 8, ..Default::default() };
        let rfm = RfmConfig { node_dim: 4, ..Default::default() };
        assert!(matches!(Networks::new(FULL, 7, 3, &am, &rfm, &PpoConfig::default()), Err(Error::Config(_))));
        let mut bad = PpoConfig::default();
        bad.module_lr.insert("foo".into(), 1.0);
        assert!(bad.validate().unwrap_err().to_string().contains("foo"));
    }
}
