//! Trajectory encoder–decoder.
//!
//! A gated recurrent encoder reads `(o^k, one_hot(a^{k−1}))` for `k = 1..t`;
//! the final state, linearly projected, is the agent embedding `e^t`. Two
//! linear heads decode it into a reconstruction of `o^t` and logits for the
//! action taken at `t`. Training minimises
//! `‖ô^t − o^t‖² − log p(a^t | e^t)`.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::env::Observation;
use crate::error::{config_err, usage_err, Result};
use crate::numerics::layers::{GruCell, Linear};
use crate::numerics::{Graph, ParameterSet, Tensor, Var};

/// What the action head predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdTarget {
    /// The agent's own action at `t`.
    OwnAction,
    /// The action at `t` of every agent in the episode, in id order.
    TeammateActions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentModelConfig {
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub target: EdTarget,
}

impl Default for AgentModelConfig {
    fn default() -> Self {
        Self { hidden_dim: 32, embed_dim: 32, target: EdTarget::OwnAction }
    }
}

/// `h^t = {(o^k, a^{k−1})}_{k=1..t}` with `a^0` the zero vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    obs_dim: usize,
    n_actions: usize,
    observations: Vec<Observation>,
    prev_actions: Vec<Option<usize>>,
}

impl Trajectory {
    pub fn new(obs_dim: usize, n_actions: usize) -> Self {
        Self { obs_dim, n_actions, observations: Vec::new(), prev_actions: Vec::new() }
    }

    /// Appends `o^k` together with the action taken at `k − 1` (`None` at k = 1).
    pub fn push(&mut self, obs: Observation, prev_action: Option<usize>) -> Result<()> {
        if obs.len() != self.obs_dim {
            return Err(config_err!("observation of width {} in a trajectory of width {}", obs.len(), self.obs_dim));
        }
        if let Some(a) = prev_action {
            if a >= self.n_actions {
                return Err(usage_err!("action {a} out of range"));
            }
        }
        self.observations.push(obs);
        self.prev_actions.push(prev_action);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn last_observation(&self) -> Option<&Observation> {
        self.observations.last()
    }

    /// The first `t` steps.
    pub fn prefix(&self, t: usize) -> Trajectory {
        Trajectory {
            obs_dim: self.obs_dim,
            n_actions: self.n_actions,
            observations: self.observations[..t].to_vec(),
            prev_actions: self.prev_actions[..t].to_vec(),
        }
    }

    /// Encoder input row for step `k` (0-based).
    pub fn input_row(&self, k: usize) -> Vec<f64> {
        encoder_input(&self.observations[k], self.prev_actions[k], self.n_actions)
    }
}

/// `[o, one_hot(prev_action)]`.
pub fn encoder_input(obs: &[f64], prev_action: Option<usize>, n_actions: usize) -> Vec<f64> {
    let mut row = Vec::with_capacity(obs.len() + n_actions);
    row.extend_from_slice(obs);
    let mut onehot = vec![0.0; n_actions];
    if let Some(a) = prev_action {
        onehot[a] = 1.0;
    }
    row.extend(onehot);
    row
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentEmbedding(pub Vec<f64>);

/// Loss value with its two terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EdLoss {
    pub total: f64,
    pub reconstruction: f64,
    pub action: f64,
}

/// One training sequence for batched BPTT: encoder inputs plus the targets at
/// every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdSequence {
    /// `len × (obs_dim + n_actions)`.
    pub inputs: Vec<f64>,
    /// `len × obs_dim`.
    pub obs_targets: Vec<f64>,
    /// `len × n_targets` action indices.
    pub action_targets: Vec<usize>,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentModel {
    pub config: AgentModelConfig,
    pub obs_dim: usize,
    pub n_actions: usize,
    /// Number of agents whose actions the action head predicts.
    pub n_targets: usize,
    gru: GruCell,
    proj: Linear,
    dec_obs: Linear,
    dec_act: Linear,
}

impl AgentModel {
    pub fn new(config: &AgentModelConfig, obs_dim: usize, n_actions: usize, n_agents: usize) -> Result<Self> {
        if config.hidden_dim == 0 || config.embed_dim == 0 {
            return Err(config_err!("agent_model dimensions must be positive"));
        }
        let n_targets = match config.target {
            EdTarget::OwnAction => 1,
            EdTarget::TeammateActions => n_agents,
        };
        let (h, d) = (config.hidden_dim, config.embed_dim);
        Ok(Self {
            config: config.clone(),
            obs_dim,
            n_actions,
            n_targets,
            gru: GruCell::new("am.gru", obs_dim + n_actions, h),
            proj: Linear::new("am.proj", h, d),
            dec_obs: Linear::new("am.dec_obs", d, obs_dim),
            dec_act: Linear::new("am.dec_act", d, n_actions * n_targets),
        })
    }

    pub fn init(&self, params: &mut ParameterSet) -> Result<()> {
        self.gru.init(params)?;
        self.proj.init(params)?;
        self.dec_obs.init(params)?;
        self.dec_act.init(params)
    }

    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.n_actions
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    /// One recurrent step for a batch; returns the new state and the embedding.
    pub fn encode_step(&self, g: &mut Graph, p: &ParameterSet, state: Var, input: Var) -> Result<(Var, Var)> {
        if g.value(input).cols() != self.input_dim() {
            return Err(config_err!("encoder input width {} != {}", g.value(input).cols(), self.input_dim()));
        }
        let h = self.gru.step(g, p, state, input)?;
        let e = self.proj.forward(g, p, h)?;
        Ok((h, e))
    }

    pub fn encode(&self, traj: &Trajectory, p: &ParameterSet) -> Result<AgentEmbedding> {
        if traj.is_empty() {
            return Err(usage_err!("cannot encode an empty trajectory"));
        }
        if traj.obs_dim() != self.obs_dim {
            return Err(config_err!("trajectory width {} != encoder width {}", traj.obs_dim(), self.obs_dim));
        }
        let mut g = Graph::inference();
        let mut h = g.constant(Tensor::zeros(&[1, self.hidden_dim()]));
        let mut e = h;
        for k in 0..traj.len() {
            let x = g.row(traj.input_row(k));
            (h, e) = self.encode_step(&mut g, p, h, x)?;
        }
        Ok(AgentEmbedding(g.value(e).data().to_vec()))
    }

    pub fn decode_vars(&self, g: &mut Graph, p: &ParameterSet, e: Var) -> Result<(Var, Var)> {
        let obs = self.dec_obs.forward(g, p, e)?;
        let logits = self.dec_act.forward(g, p, e)?;
        Ok((obs, logits))
    }

    /// Reconstructed observation and action logits (`n_targets × n_actions`,
    /// flattened).
    pub fn decode(&self, e: &AgentEmbedding, p: &ParameterSet) -> Result<(Vec<f64>, Vec<f64>)> {
        if e.0.len() != self.embed_dim() {
            return Err(config_err!("embedding width {} != {}", e.0.len(), self.embed_dim()));
        }
        let mut g = Graph::inference();
        let ev = g.row(e.0.clone());
        let (o, l) = self.decode_vars(&mut g, p, ev)?;
        Ok((g.value(o).data().to_vec(), g.value(l).data().to_vec()))
    }

    /// Loss for a trajectory ending at `t` against that step's observation and
    /// action(s).
    pub fn ed_loss(&self, traj: &Trajectory, obs_t: &[f64], actions_t: &[usize], p: &ParameterSet) -> Result<EdLoss> {
        if obs_t.len() != self.obs_dim {
            return Err(config_err!("target observation width {}", obs_t.len()));
        }
        if actions_t.len() != self.n_targets {
            return Err(usage_err!("{} action targets for {} predicted agents", actions_t.len(), self.n_targets));
        }
        if let Some(a) = actions_t.iter().find(|&&a| a >= self.n_actions) {
            return Err(usage_err!("action {a} out of range"));
        }
        let e = self.encode(traj, p)?;
        let (o_hat, logits) = self.decode(&e, p)?;
        let reconstruction: f64 = o_hat.iter().zip(obs_t).map(|(a, b)| (a - b) * (a - b)).sum();
        let mut action = 0.0;
        for (k, &a) in actions_t.iter().enumerate() {
            let lp = crate::numerics::log_softmax(&logits[k * self.n_actions..(k + 1) * self.n_actions]);
            action -= lp[a];
        }
        Ok(EdLoss { total: reconstruction + action, reconstruction, action })
    }

    /// Builds a training sequence: inputs from `observations` and
    /// `own_actions`, targets `(o^t, action_targets[t])` at every step.
    pub fn sequence(
        &self,
        observations: &[Observation],
        own_actions: &[usize],
        action_targets: &[Vec<usize>],
    ) -> Result<EdSequence> {
        let len = observations.len();
        if own_actions.len() != len || action_targets.len() != len {
            return Err(usage_err!("sequence parts have different lengths"));
        }
        let mut inputs = Vec::with_capacity(len * self.input_dim());
        let mut obs_targets = Vec::with_capacity(len * self.obs_dim);
        let mut targets = Vec::with_capacity(len * self.n_targets);
        for t in 0..len {
            if observations[t].len() != self.obs_dim {
                return Err(config_err!("observation width {}", observations[t].len()));
            }
            let prev = if t == 0 { None } else { Some(own_actions[t - 1]) };
            inputs.extend(encoder_input(&observations[t], prev, self.n_actions));
            obs_targets.extend_from_slice(&observations[t]);
            if action_targets[t].len() != self.n_targets {
                return Err(usage_err!("{} action targets for {} predicted agents", action_targets[t].len(), self.n_targets));
            }
            if action_targets[t].iter().any(|&a| a >= self.n_actions) {
                return Err(usage_err!("action target out of range"));
            }
            targets.extend_from_slice(&action_targets[t]);
        }
        Ok(EdSequence { inputs, obs_targets, action_targets: targets, len })
    }

    /// Mean loss over every step of every sequence, by backpropagation through
    /// time. Returns `(total, reconstruction, action)`.
    pub fn batch_loss(&self, g: &mut Graph, p: &ParameterSet, seqs: &[&EdSequence]) -> Result<(Var, Var, Var)> {
        if seqs.is_empty() {
            return Err(usage_err!("empty sequence batch"));
        }
        let b = seqs.len();
        let max_len = seqs.iter().map(|s| s.len).max().unwrap_or(0);
        let (din, dobs, na, nt) = (self.input_dim(), self.obs_dim, self.n_actions, self.n_targets);
        let mut h = g.constant(Tensor::zeros(&[b, self.hidden_dim()]));
        let mut embeddings = Vec::with_capacity(max_len);
        let mut obs_t = Vec::with_capacity(max_len * b * dobs);
        let mut act_t = Vec::with_capacity(max_len * b * nt);
        let mut mask_obs = Vec::with_capacity(max_len * b * dobs);
        let mut mask_act = Vec::with_capacity(max_len * b * nt);
        let mut count = 0usize;
        for t in 0..max_len {
            let mut x = Vec::with_capacity(b * din);
            for s in seqs {
                let valid = t < s.len;
                if valid {
                    x.extend_from_slice(&s.inputs[t * din..(t + 1) * din]);
                    obs_t.extend_from_slice(&s.obs_targets[t * dobs..(t + 1) * dobs]);
                    act_t.extend_from_slice(&s.action_targets[t * nt..(t + 1) * nt]);
                    count += 1;
                } else {
                    x.extend(core::iter::repeat(0.0).take(din));
                    obs_t.extend(core::iter::repeat(0.0).take(dobs));
                    act_t.extend(core::iter::repeat(0).take(nt));
                }
                let m = if valid { 1.0 } else { 0.0 };
                mask_obs.extend(core::iter::repeat(m).take(dobs));
                mask_act.extend(core::iter::repeat(m).take(nt));
            }
            let xv = g.matrix(b, din, x);
            let (hn, e) = self.encode_step(g, p, h, xv)?;
            h = hn;
            embeddings.push(e);
        }
        let rows = max_len * b;
        let e_all = g.concat_rows(&embeddings)?;
        let (o_hat, logits) = self.decode_vars(g, p, e_all)?;
        let target = g.matrix(rows, dobs, obs_t);
        let diff = g.sub(o_hat, target)?;
        let sq = g.square(diff);
        let sq = g.mul_const(sq, mask_obs)?;
        let recon = g.sum(sq);
        let logits = g.reshape(logits, rows * nt, na)?;
        let lp = g.log_softmax_rows(logits);
        let picked = g.pick_cols(lp, &act_t)?;
        let picked = g.mul_const(picked, mask_act)?;
        let nll = g.sum(picked);
        let inv = 1.0 / count as f64;
        let recon = g.scale(recon, inv);
        let action = g.scale(nll, -inv);
        let total = g.add(recon, action)?;
        Ok((total, recon, action))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvConfig, PredatorPrey};
    use crate::numerics::optim::Adam;
    use crate::rng;
    use rand::Rng as _;

    fn model(seed: u64) -> (AgentModel, ParameterSet) {
        let m = AgentModel::new(&AgentModelConfig { hidden_dim: 8, embed_dim: 6, ..Default::default() }, 9, 5, 3).unwrap();
        let mut p = ParameterSet::new(seed);
        m.init(&mut p).unwrap();
        (m, p)
    }

    fn random_traj(rng: &mut crate::rng::Rng, len: usize) -> Trajectory {
        let mut t = Trajectory::new(9, 5);
        for k in 0..len {
            let o = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let prev = if k == 0 { None } else { Some(rng.gen_range(0..5)) };
            t.push(o, prev).unwrap();
        }
        t
    }

    #[test]
    fn encode_is_deterministic_and_causal() {
        let (m, p) = model(1);
        let mut rng = rng::from_seed(2);
        let traj = random_traj(&mut rng, 6);
        let a = m.encode(&traj.prefix(4), &p).unwrap();
        let b = m.encode(&traj.prefix(4), &p).unwrap();
        assert_eq!(a, b);
        let mut longer = traj.prefix(4);
        longer.push(vec![0.5; 9], Some(2)).unwrap();
        // stored embedding for the 4-step prefix is unaffected by step 5
        assert_eq!(m.encode(&longer.prefix(4), &p).unwrap(), a);
        assert_ne!(m.encode(&longer, &p).unwrap(), a);
    }

    #[test]
    fn first_step_differences_are_visible() {
        let (m, p) = model(3);
        let mut rng = rng::from_seed(4);
        let mut collisions = 0;
        for _ in 0..100 {
            let a = random_traj(&mut rng, 5);
            let mut b = a.clone();
            b.observations[0][0] += rng.gen_range(0.1..1.0);
            if m.encode(&a, &p).unwrap() == m.encode(&b, &p).unwrap() {
                collisions += 1;
            }
        }
        assert_eq!(collisions, 0);
    }

    #[test]
    fn decode_contracts() {
        let (m, mut p) = model(5);
        let e = AgentEmbedding(vec![0.3, -0.2, 0.9, 0.0, 0.1, -0.5]);
        let (o, logits) = m.decode(&e, &p).unwrap();
        assert_eq!((o.len(), logits.len()), (9, 5));
        let probs = crate::numerics::softmax(&logits);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);

        p.zero_prefix("am.dec_obs.w");
        let bias = p.get("am.dec_obs.b").unwrap().data().to_vec();
        for e in [e.clone(), AgentEmbedding(vec![5.0; 6])] {
            assert_eq!(m.decode(&e, &p).unwrap().0, bias);
        }
    }

    #[test]
    fn loss_terms() {
        let (m, mut p) = model(6);
        let mut rng = rng::from_seed(7);
        let traj = random_traj(&mut rng, 3);
        // uniform logits: zero action head
        p.zero_prefix("am.dec_act");
        let l = m.ed_loss(&traj, &[0.0; 9], &[2], &p).unwrap();
        assert!((l.action - libm::log(5.0)).abs() < 1e-12);
        assert!(l.reconstruction >= 0.0);
        assert!(matches!(m.ed_loss(&traj, &[0.0; 9], &[7], &p), Err(crate::Error::Usage(_))));
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let (m, mut p) = model(8);
        let mut rng = rng::from_seed(9);
        let traj = random_traj(&mut rng, 2);
        p.zero_prefix("am.dec");
        // reconstruct the zero observation exactly; put all mass on action 1
        p.get_mut("am.dec_act.b").unwrap().data_mut().copy_from_slice(&[-800.0, 0.0, -800.0, -800.0, -800.0]);
        let l = m.ed_loss(&traj, &[0.0; 9], &[1], &p).unwrap();
        assert_eq!(l.total, 0.0);
    }

    #[test]
    fn batch_loss_matches_per_step_loss() {
        let (m, p) = model(10);
        let mut rng = rng::from_seed(11);
        let obs: Vec<Vec<f64>> = (0..4).map(|_| (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let acts = vec![0, 3, 1, 4];
        let targets: Vec<Vec<usize>> = acts.iter().map(|&a| vec![a]).collect();
        let seq = m.sequence(&obs, &acts, &targets).unwrap();
        let short = m.sequence(&obs[..2], &acts[..2], &targets[..2]).unwrap();
        let mut g = Graph::inference();
        let (total, _, _) = m.batch_loss(&mut g, &p, &[&seq, &short]).unwrap();

        let mut want = 0.0;
        for (s, len) in [(&obs, 4usize), (&obs, 2)] {
            for t in 0..len {
                let mut traj = Trajectory::new(9, 5);
                for k in 0..=t {
                    traj.push(s[k].clone(), if k == 0 { None } else { Some(acts[k - 1]) }).unwrap();
                }
                want += m.ed_loss(&traj, &s[t], &[acts[t]], &p).unwrap().total;
            }
        }
        want /= 6.0;
        assert!((g.scalar(total) - want).abs() < 1e-12);
    }

    #[test]
    fn teammate_target_mode_predicts_every_agent() {
        let cfg = AgentModelConfig { hidden_dim: 4, embed_dim: 4, target: EdTarget::TeammateActions };
        let m = AgentModel::new(&cfg, 9, 5, 3).unwrap();
        let mut p = ParameterSet::new(0);
        m.init(&mut p).unwrap();
        let (_, logits) = m.decode(&AgentEmbedding(vec![0.1; 4]), &p).unwrap();
        assert_eq!(logits.len(), 15);
        let mut traj = Trajectory::new(9, 5);
        traj.push(vec![0.0; 9], None).unwrap();
        assert!(m.ed_loss(&traj, &[0.0; 9], &[0, 1, 2], &p).is_ok());
        assert!(m.ed_loss(&traj, &[0.0; 9], &[0], &p).is_err());
    }

    #[test]
    fn short_fit_reduces_loss() {
        let env_cfg = EnvConfig { grid_size: 5, n_agents: 3, episode_limit: 10, ..EnvConfig::default() };
        let (m, mut p) = model(12);
        let mut rng = rng::from_seed(13);
        let mut seqs = Vec::new();
        for ep in 0..8 {
            let (mut env, mut obs) = PredatorPrey::reset(&env_cfg, ep).unwrap();
            let (mut os, mut acts) = (Vec::new(), Vec::new());
            loop {
                let a: Vec<usize> = (0..3).map(|_| rng.gen_range(0..5)).collect();
                os.push(obs[0].clone());
                acts.push(a[0]);
                let r = env.step(&a.iter().map(|&i| crate::env::Action::ALL[i]).collect::<Vec<_>>()).unwrap();
                obs = r.observations;
                if r.done {
                    break;
                }
            }
            let t: Vec<Vec<usize>> = acts.iter().map(|&a| vec![a]).collect();
            seqs.push(m.sequence(&os, &acts, &t).unwrap());
        }
        let refs: Vec<&EdSequence> = seqs.iter().collect();
        let mut opt = Adam::new(1e-2);
        let mut first = None;
        let mut last = 0.0;
        for _ in 0..60 {
            let mut g = Graph::new();
            let (l, _, _) = m.batch_loss(&mut g, &p, &refs).unwrap();
            last = g.scalar(l);
            first.get_or_insert(last);
            let grads = g.backward(l).unwrap().param_grads();
            opt.apply(&mut p, &grads).unwrap();
        }
        assert!(last < first.unwrap());
    }
}
