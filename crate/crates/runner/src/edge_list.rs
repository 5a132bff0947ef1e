//! Plain-text skeleton graphs for debugging.
//!
//! ```text
//! n 4
//! groups 0 0 1 2
//! 0 1
//! 1 0
//! ...
//! ```
//! The header gives the node count and each node's group (0 = controlled);
//! every following line is one directed `sender receiver` edge.

use mars_core::skeleton::SkeletonGraph;

use crate::error::{config_error, RunResult};

pub fn to_edge_list(g: &SkeletonGraph) -> String {
    let groups: Vec<String> = g.group_of.iter().map(|k| k.to_string()).collect();
    let mut s = format!("n {}\ngroups {}\n", g.n, groups.join(" "));
    for (a, b) in &g.edges {
        s.push_str(&format!("{a} {b}\n"));
    }
    s
}

pub fn parse_edge_list(text: &str) -> RunResult<SkeletonGraph> {
    let bad = |line: usize, what: &str| config_error(format!("edge list line {line}: {what}"));
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (i, first) = lines.next().ok_or_else(|| bad(1, "missing `n` header"))?;
    let n: usize = first
        .strip_prefix("n ")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| bad(i + 1, "expected `n <count>`"))?;
    let (i, second) = lines.next().ok_or_else(|| bad(2, "missing `groups` header"))?;
    let rest = second.strip_prefix("groups").ok_or_else(|| bad(i + 1, "expected `groups ...`"))?;
    let group_of: Vec<usize> = rest
        .split_whitespace()
        .map(|v| v.parse().map_err(|_| bad(i + 1, "group ids must be integers")))
        .collect::<RunResult<_>>()?;
    if group_of.len() != n {
        return Err(bad(i + 1, "one group id per node expected"));
    }
    let mut edges = Vec::new();
    for (i, line) in lines {
        let mut it = line.split_whitespace().map(|v| v.parse::<usize>());
        match (it.next(), it.next(), it.next()) {
            (Some(Ok(a)), Some(Ok(b)), None) if a < n && b < n => edges.push((a, b)),
            _ => return Err(bad(i + 1, "expected `sender receiver` with ids below n")),
        }
    }
    Ok(SkeletonGraph { n, edges, group_of })
}
