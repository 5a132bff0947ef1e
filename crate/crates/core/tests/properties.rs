use std::collections::BTreeSet;

use mars_core::checks::random_batch;
use mars_core::env::{Action, EnvConfig, PredatorPrey, N_ACTIONS};
use mars_core::numerics::{log_softmax, softmax, ParameterSet, Tensor};
use mars_core::policy::{actor_gradients, critic_loss, gae, Features, Networks, PpoConfig};
use mars_core::rfm::{message_pass, GraphState, Rfm, RfmConfig};
use mars_core::rng;
use mars_core::skeleton::{build_skeleton, edge_count_oracle, groups_from_partition, SkeletonGraph};
use mars_core::teams::sample_composition;
use mars_core::agent_model::AgentModelConfig;
use proptest::prelude::*;
use rand::seq::SliceRandom;

/// A partition of `n` agents into groups `0..=m` with every group non-empty.
fn partition() -> impl Strategy<Value = Vec<usize>> {
    (1usize..=12).prop_flat_map(|n| (Just(n), 0..n.min(6))).prop_flat_map(|(n, m)| {
        (Just(n), Just(m), any::<u64>()).prop_map(|(n, m, seed)| {
            let mut rng = rng::from_seed(seed);
            let mut g: Vec<usize> = (0..=m).collect();
            g.extend((m + 1..n).map(|_| rand::Rng::gen_range(&mut rng, 0..=m)));
            g.shuffle(&mut rng);
            g
        })
    })
}

fn relabel(graph: &SkeletonGraph, perm: &[usize]) -> (SkeletonGraph, Vec<usize>) {
    let mut edges: Vec<(usize, (usize, usize))> =
        graph.edges.iter().enumerate().map(|(k, &(s, r))| (k, (perm[s], perm[r]))).collect();
    edges.sort_by_key(|e| e.1);
    let mut group_of = vec![0; graph.n];
    for i in 0..graph.n {
        group_of[perm[i]] = graph.group_of[i];
    }
    let order = edges.iter().map(|e| e.0).collect();
    (SkeletonGraph { n: graph.n, edges: edges.into_iter().map(|e| e.1).collect(), group_of }, order)
}

fn rows_of(t: &Tensor, order: impl Iterator<Item = usize>) -> Vec<f64> {
    order.flat_map(|i| t.row(i).to_vec()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn skeleton_invariants(group_of in partition(), r in 1usize..=2, seed in any::<u64>()) {
        let g = build_skeleton(&group_of, r, &mut rng::from_seed(seed)).unwrap();
        let groups = groups_from_partition(&group_of).unwrap();
        let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
        prop_assert_eq!(g.edge_count(), edge_count_oracle(&sizes, r));
        prop_assert!(g.edges.windows(2).all(|w| w[0] < w[1]), "sorted and unique");
        prop_assert!(g.edges.iter().all(|&(s, t)| s != t && s < g.n && t < g.n));
        let set: BTreeSet<(usize, usize)> = g.edges.iter().copied().collect();
        for &(s, t) in &g.edges {
            prop_assert!(set.contains(&(t, s)), "every link is bidirectional");
        }
        for members in &groups {
            for &a in members {
                for &b in members {
                    prop_assert!(a == b || set.contains(&(a, b)), "groups are complete");
                }
            }
        }
        for (i, gi) in groups.iter().enumerate() {
            for gj in groups.iter().skip(i + 1) {
                let reps_i: BTreeSet<usize> =
                    g.edges.iter().filter(|&&(s, t)| gi.contains(&s) && gj.contains(&t)).map(|e| e.0).collect();
                prop_assert_eq!(reps_i.len(), r.min(gi.len()));
            }
        }
        prop_assert!(g.is_weakly_connected());
    }

    #[test]
    fn rfm_is_permutation_equivariant(group_of in partition(), seed in any::<u64>()) {
        let cfg = RfmConfig { node_dim: 4, edge_dim: 3, global_dim: 2, hidden: 5, ..Default::default() };
        let rfm = Rfm::new(&cfg).unwrap();
        let mut p = ParameterSet::new(seed);
        rfm.init(&mut p).unwrap();
        let mut rng = rng::from_seed(seed);
        let graph = build_skeleton(&group_of, 1, &mut rng).unwrap();
        let n = graph.n;
        let m = graph.edge_count();
        let mut draw = |len: usize| -> Vec<f64> { (0..len).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect() };
        let state = GraphState {
            nodes: Tensor::matrix(n, 4, draw(n * 4)),
            edges: Tensor::matrix(m, 3, draw(m * 3)),
            global: Tensor::matrix(1, 2, draw(2)),
        };
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng::from_seed(seed ^ 7));
        let (pg, order) = relabel(&graph, &perm);
        let mut inverse = vec![0; n];
        for i in 0..n {
            inverse[perm[i]] = i;
        }
        let pstate = GraphState {
            nodes: Tensor::matrix(n, 4, rows_of(&state.nodes, inverse.iter().copied())),
            edges: Tensor::matrix(m, 3, rows_of(&state.edges, order.iter().copied())),
            global: state.global.clone(),
        };
        let a = message_pass(&rfm, &state, &graph, 2, &p).unwrap();
        let b = message_pass(&rfm, &pstate, &pg, 2, &p).unwrap();
        for (x, y) in a.global.data().iter().zip(b.global.data()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        for i in 0..n {
            for (x, y) in a.nodes.row(i).iter().zip(b.nodes.row(perm[i])) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-50.0f64..50.0, 1..10)) {
        let p = softmax(&logits);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (a, b) in p.iter().zip(log_softmax(&logits)) {
            prop_assert!((a - b.exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn gae_returns_are_advantages_plus_values(
        rewards in prop::collection::vec(-1.0f64..1.0, 1..30),
        seed in any::<u64>(),
        gamma in 0.5f64..1.0,
        lambda in 0.0f64..1.0,
    ) {
        let mut rng = rng::from_seed(seed);
        let n = rewards.len();
        let values: Vec<f64> = (0..=n).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
        let dones: Vec<bool> = (0..n).map(|_| rand::Rng::gen_bool(&mut rng, 0.2)).collect();
        let (adv, ret) = gae(&rewards, &values, &dones, gamma, lambda).unwrap();
        for t in 0..n {
            prop_assert!((ret[t] - adv[t] - values[t]).abs() < 1e-12);
        }
        // λ = 0 reduces to the one-step TD error
        let (td, _) = gae(&rewards, &values, &dones, gamma, 0.0).unwrap();
        for t in 0..n {
            let next = if dones[t] { 0.0 } else { values[t + 1] };
            prop_assert!((td[t] - (rewards[t] + gamma * next - values[t])).abs() < 1e-12);
        }
    }

    #[test]
    fn compositions_partition_the_agents(n in 1usize..=12, m in 0usize..6, seed in any::<u64>()) {
        prop_assume!(m < n);
        let c = sample_composition(&[0, 1, 2, 3, 4, 5], n, m, &mut rng::from_seed(seed)).unwrap();
        c.validate().unwrap();
        let sizes = c.group_sizes();
        prop_assert_eq!(sizes.len(), m + 1);
        prop_assert!(sizes.iter().all(|&s| s >= 1));
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        let distinct: BTreeSet<usize> = c.policies.iter().copied().collect();
        prop_assert_eq!(distinct.len(), m);
    }

    #[test]
    fn observations_stay_in_range(n in 1usize..=6, seed in any::<u64>(), moves in prop::collection::vec(0usize..N_ACTIONS, 0..60)) {
        let cfg = EnvConfig { n_agents: n, ..EnvConfig::default() };
        let (mut env, obs) = PredatorPrey::reset(&cfg, seed).unwrap();
        prop_assert!(obs.iter().all(|o| o.len() == 2 * n + 3));
        for chunk in moves.chunks(n) {
            if chunk.len() < n || env.is_done() {
                break;
            }
            let actions: Vec<Action> = chunk.iter().map(|&a| Action::ALL[a]).collect();
            let step = env.step(&actions).unwrap();
            for o in &step.observations {
                prop_assert!(o.iter().all(|x| (-1.0..=1.0).contains(x)));
                prop_assert!(o[..2].iter().all(|x| *x >= 0.0));
            }
            prop_assert!(step.reward == cfg.reward_capture || step.reward == -cfg.step_cost);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn actor_gradient_ignores_uncontrolled_rows(seed in any::<u64>(), ctrl in 1usize..4) {
        let n = 5;
        let features = Features { agent_model: true, rfm: true, sparse_skeleton: true };
        let am = AgentModelConfig { hidden_dim: 6, embed_dim: 4, ..Default::default() };
        let rfm = RfmConfig { node_dim: 4, edge_dim: 3, global_dim: 3, hidden: 5, ..Default::default() };
        let ppo = PpoConfig { hidden: vec![8], ..Default::default() };
        let nets = Networks::new(features, 7, n, &am, &rfm, &ppo).unwrap();
        let mut p = ParameterSet::new(seed);
        nets.init(&mut p).unwrap();
        let b = random_batch(&nets, 3, n, ctrl, seed);
        let mut q = b.clone();
        let mut rng = rng::from_seed(seed ^ 3);
        for i in 0..q.rows() {
            if !q.controlled[i] {
                for x in &mut q.base[i * q.base_dim..(i + 1) * q.base_dim] {
                    *x = rand::Rng::gen_range(&mut rng, -1.0..1.0);
                }
                q.actions[i] = rand::Rng::gen_range(&mut rng, 0..N_ACTIONS);
                q.log_probs[i] -= 0.3;
                q.advantages[i] += 5.0;
                q.returns[i] += 1.0;
            }
        }
        prop_assert_eq!(actor_gradients(&nets, &p, &b, &ppo).unwrap(), actor_gradients(&nets, &p, &q, &ppo).unwrap());
        prop_assert_ne!(critic_loss(&nets, &p, &b).unwrap(), critic_loss(&nets, &p, &q).unwrap());
    }
}
