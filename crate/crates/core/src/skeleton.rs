//! Sparse agent skeleton.
//!
//! Agents of the same group (the controlled set is group 0) form a complete
//! directed subgraph. For every pair of groups, up to `r` representatives are
//! drawn without replacement from each side and all representative pairs are
//! linked in both directions. Edges are kept sorted by `(sender, receiver)` so
//! equal edge sets always produce identical message-passing arithmetic.

use alloc::vec;
use alloc::vec::Vec;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonGraph {
    pub n: usize,
    /// `(sender, receiver)`, sorted, no duplicates, no self-loops.
    pub edges: Vec<(usize, usize)>,
    pub group_of: Vec<usize>,
}

impl SkeletonGraph {
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn n_groups(&self) -> usize {
        self.group_of.iter().map(|g| g + 1).max().unwrap_or(0)
    }

    pub fn senders(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.0).collect()
    }

    pub fn receivers(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.1).collect()
    }

    /// Every node reachable from node 0 ignoring edge direction.
    pub fn is_weakly_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let mut parent: Vec<usize> = (0..self.n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for &(s, r) in &self.edges {
            let (a, b) = (find(&mut parent, s), find(&mut parent, r));
            parent[a] = b;
        }
        let root = find(&mut parent, 0);
        (0..self.n).all(|i| find(&mut parent, i) == root)
    }
}

/// Members of each group in ascending id order; errors if a group index in
/// `0..=max` has no member.
pub fn groups_from_partition(group_of: &[usize]) -> Result<Vec<Vec<usize>>> {
    let n_groups = group_of.iter().map(|g| g + 1).max().unwrap_or(0);
    let mut groups = vec![Vec::new(); n_groups];
    for (agent, &g) in group_of.iter().enumerate() {
        groups[g].push(agent);
    }
    if let Some(empty) = groups.iter().position(Vec::is_empty) {
        return Err(config_err!("group {empty} has no members"));
    }
    Ok(groups)
}

pub fn build_skeleton(group_of: &[usize], r: usize, rng: &mut Rng) -> Result<SkeletonGraph> {
    if r < 1 {
        return Err(config_err!("representatives per group must be at least 1"));
    }
    let groups = groups_from_partition(group_of)?;
    let mut edges = Vec::new();
    for members in &groups {
        for &u in members {
            for &v in members {
                if u != v {
                    edges.push((u, v));
                }
            }
        }
    }
    for a in 0..groups.len() {
        for b in a + 1..groups.len() {
            let reps_a = representatives(&groups[a], r, rng);
            let reps_b = representatives(&groups[b], r, rng);
            for &u in &reps_a {
                for &v in &reps_b {
                    edges.push((u, v));
                    edges.push((v, u));
                }
            }
        }
    }
    edges.sort_unstable();
    Ok(SkeletonGraph { n: group_of.len(), edges, group_of: group_of.to_vec() })
}

fn representatives(members: &[usize], r: usize, rng: &mut Rng) -> Vec<usize> {
    let k = r.min(members.len());
    sample(rng, members.len(), k).into_iter().map(|i| members[i]).collect()
}

/// Complete digraph; every agent in group 0.
pub fn build_full_graph(n: usize) -> SkeletonGraph {
    let mut edges = Vec::with_capacity(n * n.saturating_sub(1));
    for u in 0..n {
        for v in 0..n {
            if u != v {
                edges.push((u, v));
            }
        }
    }
    SkeletonGraph { n, edges, group_of: vec![0; n] }
}

/// `Σ_g |g|(|g|−1) + 2·Σ_{g<g'} min(r,|g|)·min(r,|g'|)`.
pub fn edge_count_oracle(group_sizes: &[usize], r: usize) -> usize {
    let intra: usize = group_sizes.iter().map(|s| s * s.saturating_sub(1)).sum();
    let mut inter = 0;
    for a in 0..group_sizes.len() {
        for b in a + 1..group_sizes.len() {
            inter += r.min(group_sizes[a]) * r.min(group_sizes[b]);
        }
    }
    intra + 2 * inter
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    fn partition(sizes: &[usize]) -> Vec<usize> {
        sizes.iter().enumerate().flat_map(|(g, &s)| core::iter::repeat(g).take(s)).collect()
    }

    /// Counts edges by walking every ordered agent pair and asking whether the
    /// construction rule admits it for a fixed representative choice.
    fn enumerate_count(sizes: &[usize], r: usize) -> usize {
        let p = partition(sizes);
        let n = p.len();
        let groups = groups_from_partition(&p).unwrap();
        // deterministic representatives: the first min(r, |g|) members
        let is_rep = |a: usize| {
            let g = &groups[p[a]];
            g.iter().position(|&x| x == a).unwrap() < r.min(g.len())
        };
        let mut count = 0;
        for u in 0..n {
            for v in 0..n {
                if u == v {
                    continue;
                }
                if p[u] == p[v] || (is_rep(u) && is_rep(v)) {
                    count += 1;
                }
            }
        }
        count
    }

    #[test]
    fn single_group_is_complete() {
        let g = build_skeleton(&[0, 0, 0, 0], 1, &mut rng::from_seed(0)).unwrap();
        assert_eq!(g.edge_count(), 12);
        assert_eq!(g, SkeletonGraph { group_of: vec![0; 4], ..build_full_graph(4) });
    }

    #[test]
    fn sizes_three_two_r1() {
        let g = build_skeleton(&partition(&[3, 2]), 1, &mut rng::from_seed(0)).unwrap();
        assert_eq!(g.edge_count(), 10);
        assert_eq!(edge_count_oracle(&[3, 2], 1), 10);
        assert_eq!(enumerate_count(&[3, 2], 1), 10);
    }

    #[test]
    fn singletons_any_r() {
        for r in 1..4 {
            let g = build_skeleton(&[0, 1], r, &mut rng::from_seed(r as u64)).unwrap();
            assert_eq!(g.edges, vec![(0, 1), (1, 0)]);
        }
    }

    #[test]
    fn three_pairs_r1() {
        assert_eq!(edge_count_oracle(&[2, 2, 2], 1), 12);
        assert_eq!(enumerate_count(&[2, 2, 2], 1), 12);
    }

    #[test]
    fn full_graph_counts() {
        assert_eq!(build_full_graph(1).edge_count(), 0);
        assert_eq!(build_full_graph(3).edge_count(), 6);
    }

    #[test]
    fn empty_group_is_config_error() {
        assert!(matches!(build_skeleton(&[0, 2], 1, &mut rng::from_seed(0)), Err(crate::Error::Config(_))));
        assert!(build_skeleton(&[0, 0], 0, &mut rng::from_seed(0)).is_err());
    }

    #[test]
    fn oracle_agrees_with_enumeration_on_random_partitions() {
        let mut rng = rng::from_seed(99);
        for _ in 0..100 {
            let m = rng.gen_range(1..=5);
            let sizes: Vec<usize> = (0..m).map(|_| rng.gen_range(1..=4)).collect();
            let r = rng.gen_range(1..=4);
            assert_eq!(edge_count_oracle(&sizes, r), enumerate_count(&sizes, r), "{sizes:?} r={r}");
        }
    }

    #[test]
    fn resampling_changes_representatives_not_counts() {
        let p = partition(&[3, 3, 2]);
        let a = build_skeleton(&p, 1, &mut rng::from_seed(1)).unwrap();
        let mut differs = false;
        for s in 2..40 {
            let b = build_skeleton(&p, 1, &mut rng::from_seed(s)).unwrap();
            assert_eq!(a.edge_count(), b.edge_count());
            differs |= a.edges != b.edges;
        }
        assert!(differs);
    }

    #[test]
    fn sparsity_against_complete_graph() {
        for g0 in 1..5 {
            for m in 2..5 {
                let sizes = vec![g0; m];
                let inter = edge_count_oracle(&sizes, 1) - m * g0 * (g0 - 1);
                assert_eq!(inter, m * (m - 1));
                let complete_inter = m * (m - 1) * g0 * g0;
                if g0 >= 2 {
                    assert!(inter < complete_inter);
                } else {
                    assert_eq!(inter, complete_inter);
                }
            }
        }
    }
}
