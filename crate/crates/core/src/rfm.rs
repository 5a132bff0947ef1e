//! Relational forward model: edge → node → global message passing.
//!
//! One round over a graph with edge features `E`, node features `V` and a
//! global feature `u`:
//!
//! ```text
//! e'_k = φe(e_k, v_recv(k), v_send(k), u)      ē'_i = Σ_{k: recv(k)=i} e'_k
//! v'_i = φv(ē'_i, v_i, u)                        v̄'  = Σ_i v'_i
//! u'   = φu(ē', v̄', u)                           ē'  = Σ_k e'_k
//! ```
//!
//! Aggregations are sums (empty sum = 0). Parameters are shared across
//! rounds. Several graphs are processed at once as one disjoint union, with
//! one global feature row per graph.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, usage_err, Result};
use crate::numerics::layers::Mlp;
use crate::numerics::{Graph, ParameterSet, Tensor, Var};
use crate::skeleton::SkeletonGraph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RfmConfig {
    pub node_dim: usize,
    pub edge_dim: usize,
    pub global_dim: usize,
    /// Hidden width of each update network; 0 for a single affine layer.
    pub hidden: usize,
    pub rounds: usize,
    /// Feed the current global feature into edge and node updates.
    pub global_feedback: bool,
}

impl Default for RfmConfig {
    fn default() -> Self {
        Self { node_dim: 32, edge_dim: 32, global_dim: 32, hidden: 32, rounds: 2, global_feedback: true }
    }
}

impl RfmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.node_dim == 0 || self.edge_dim == 0 || self.global_dim == 0 {
            return Err(config_err!("rfm feature dimensions must be positive"));
        }
        if self.rounds < 1 {
            return Err(config_err!("rfm.rounds must be at least 1"));
        }
        Ok(())
    }

    /// Width of the per-agent relational embedding `[v'_i, u']`.
    pub fn output_dim(&self) -> usize {
        self.node_dim + self.global_dim
    }
}

/// Disjoint union of graphs with node/edge → graph bookkeeping.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GraphBatch {
    pub n_nodes: usize,
    pub senders: Vec<usize>,
    pub receivers: Vec<usize>,
    pub node_graph: Vec<usize>,
    pub edge_graph: Vec<usize>,
    pub n_graphs: usize,
}

impl GraphBatch {
    pub fn single(graph: &SkeletonGraph) -> Self {
        let mut b = Self::default();
        b.push(graph);
        b
    }

    pub fn push(&mut self, graph: &SkeletonGraph) {
        let offset = self.n_nodes;
        let gid = self.n_graphs;
        for &(s, r) in &graph.edges {
            self.senders.push(s + offset);
            self.receivers.push(r + offset);
            self.edge_graph.push(gid);
        }
        self.node_graph.extend(core::iter::repeat(gid).take(graph.n));
        self.n_nodes += graph.n;
        self.n_graphs += 1;
    }

    pub fn n_edges(&self) -> usize {
        self.senders.len()
    }
}

/// How each node's initial feature is formed.
///
/// Controlled agents contribute their own embedding. Every other agent starts
/// from a learned shared vector plus a learned projection of its position
/// relative to a controlled observer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeInputs {
    /// `n × node_dim`; zero rows for uncontrolled agents.
    pub embeddings: Vec<f64>,
    /// `n × 2`; zero rows for controlled agents.
    pub positions: Vec<f64>,
    /// 1.0 for uncontrolled agents.
    pub unknown: Vec<f64>,
}

impl NodeInputs {
    pub fn n(&self) -> usize {
        self.unknown.len()
    }

    pub fn extend(&mut self, other: &NodeInputs) {
        self.embeddings.extend_from_slice(&other.embeddings);
        self.positions.extend_from_slice(&other.positions);
        self.unknown.extend_from_slice(&other.unknown);
    }
}

/// Plain-data graph state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphState {
    pub nodes: Tensor,
    pub edges: Tensor,
    pub global: Tensor,
}

/// Graph state recorded on a [`Graph`].
#[derive(Debug, Clone, Copy)]
pub struct GraphVars {
    pub nodes: Var,
    pub edges: Var,
    pub global: Var,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rfm {
    pub config: RfmConfig,
    pub edge: Mlp,
    pub node: Mlp,
    pub global: Mlp,
}

impl Rfm {
    pub fn new(config: &RfmConfig) -> Result<Self> {
        config.validate()?;
        let (dv, de, du) = (config.node_dim, config.edge_dim, config.global_dim);
        let hidden: Vec<usize> = if config.hidden > 0 { vec![config.hidden] } else { Vec::new() };
        Ok(Self {
            config: config.clone(),
            edge: Mlp::new("rfm.edge", de + 2 * dv + du, &hidden, de, true),
            node: Mlp::new("rfm.node", de + dv + du, &hidden, dv, true),
            global: Mlp::new("rfm.global", de + dv + du, &hidden, du, true),
        })
    }

    pub fn init(&self, params: &mut ParameterSet) -> Result<()> {
        self.edge.init(params)?;
        self.node.init(params)?;
        self.global.init(params)?;
        let dv = self.config.node_dim;
        params.init_uniform("rfm.unknown", &[dv], dv)?;
        params.init_uniform("rfm.pos_w", &[2, dv], 2)
    }

    /// `φe` on a batch of edge rows.
    pub fn edge_update(&self, g: &mut Graph, p: &ParameterSet, e: Var, v_recv: Var, v_send: Var, u: Var) -> Result<Var> {
        let x = g.concat_cols(&[e, v_recv, v_send, u])?;
        self.edge.forward(g, p, x)
    }

    /// `φv` on a batch of node rows.
    pub fn node_update(&self, g: &mut Graph, p: &ParameterSet, e_agg: Var, v: Var, u: Var) -> Result<Var> {
        let x = g.concat_cols(&[e_agg, v, u])?;
        self.node.forward(g, p, x)
    }

    /// `φu` on a batch of graph rows.
    pub fn global_update(&self, g: &mut Graph, p: &ParameterSet, e_agg: Var, v_agg: Var, u: Var) -> Result<Var> {
        let x = g.concat_cols(&[e_agg, v_agg, u])?;
        self.global.forward(g, p, x)
    }

    /// Initial node features `n × node_dim`.
    pub fn init_nodes(&self, g: &mut Graph, p: &ParameterSet, inputs: &NodeInputs) -> Result<Var> {
        let n = inputs.n();
        let dv = self.config.node_dim;
        if inputs.embeddings.len() != n * dv || inputs.positions.len() != n * 2 {
            return Err(config_err!("node inputs do not match {n} nodes of width {dv}"));
        }
        let emb = g.matrix(n, dv, inputs.embeddings.clone());
        let mask = g.matrix(n, 1, inputs.unknown.clone());
        let unknown = g.param(p, "rfm.unknown")?;
        let unknown = g.reshape(unknown, 1, dv)?;
        let unknown = g.matmul(mask, unknown)?;
        let pos = g.matrix(n, 2, inputs.positions.clone());
        let pos_w = g.param(p, "rfm.pos_w")?;
        let pos = g.matmul(pos, pos_w)?;
        let v = g.add(emb, unknown)?;
        g.add(v, pos)
    }

    /// Zero edge and global features for `batch`.
    pub fn zero_state(&self, g: &mut Graph, batch: &GraphBatch, nodes: Var) -> GraphVars {
        let edges = g.constant(Tensor::zeros(&[batch.n_edges(), self.config.edge_dim]));
        let global = g.constant(Tensor::zeros(&[batch.n_graphs, self.config.global_dim]));
        GraphVars { nodes, edges, global }
    }

    pub fn round(&self, g: &mut Graph, p: &ParameterSet, batch: &GraphBatch, s: GraphVars) -> Result<GraphVars> {
        let (n_e, n_v) = (batch.n_edges(), batch.n_nodes);
        if g.value(s.nodes).rows() != n_v || g.value(s.edges).rows() != n_e || g.value(s.global).rows() != batch.n_graphs
        {
            return Err(usage_err!("graph state does not match the graph batch"));
        }
        let (u_edge, u_node) = if self.config.global_feedback {
            (g.gather_rows(s.global, &batch.edge_graph)?, g.gather_rows(s.global, &batch.node_graph)?)
        } else {
            let du = self.config.global_dim;
            (g.constant(Tensor::zeros(&[n_e, du])), g.constant(Tensor::zeros(&[n_v, du])))
        };
        let v_recv = g.gather_rows(s.nodes, &batch.receivers)?;
        let v_send = g.gather_rows(s.nodes, &batch.senders)?;
        let edges = self.edge_update(g, p, s.edges, v_recv, v_send, u_edge)?;

        let e_agg = g.segment_sum(edges, &batch.receivers, n_v)?;
        let nodes = self.node_update(g, p, e_agg, s.nodes, u_node)?;

        let e_all = g.segment_sum(edges, &batch.edge_graph, batch.n_graphs)?;
        let v_all = g.segment_sum(nodes, &batch.node_graph, batch.n_graphs)?;
        let global = self.global_update(g, p, e_all, v_all, s.global)?;
        Ok(GraphVars { nodes, edges, global })
    }

    pub fn message_pass(
        &self,
        g: &mut Graph,
        p: &ParameterSet,
        batch: &GraphBatch,
        mut s: GraphVars,
        rounds: usize,
    ) -> Result<GraphVars> {
        if rounds < 1 {
            return Err(config_err!("message passing needs at least one round"));
        }
        for _ in 0..rounds {
            s = self.round(g, p, batch, s)?;
        }
        Ok(s)
    }

    /// Per-node relational embedding `[v'_i, u'_graph(i)]` after the configured
    /// number of rounds, starting from `inputs` and zero edge/global features.
    pub fn embed(&self, g: &mut Graph, p: &ParameterSet, batch: &GraphBatch, inputs: &NodeInputs) -> Result<Var> {
        if inputs.n() != batch.n_nodes {
            return Err(usage_err!("{} node inputs for {} nodes", inputs.n(), batch.n_nodes));
        }
        let nodes = self.init_nodes(g, p, inputs)?;
        let s = self.zero_state(g, batch, nodes);
        let out = self.message_pass(g, p, batch, s, self.config.rounds)?;
        let u = g.gather_rows(out.global, &batch.node_graph)?;
        g.concat_cols(&[out.nodes, u])
    }
}

/// Runs `rounds` of message passing on plain data.
pub fn message_pass(
    rfm: &Rfm,
    state: &GraphState,
    graph: &SkeletonGraph,
    rounds: usize,
    params: &ParameterSet,
) -> Result<GraphState> {
    if state.nodes.rows() != graph.n || state.edges.rows() != graph.edges.len() || state.global.rows() != 1 {
        return Err(usage_err!("graph state is not aligned with the skeleton"));
    }
    let batch = GraphBatch::single(graph);
    let mut g = Graph::inference();
    let s = GraphVars {
        nodes: g.constant(state.nodes.clone()),
        edges: g.constant(state.edges.clone()),
        global: g.constant(state.global.clone()),
    };
    let out = rfm.message_pass(&mut g, params, &batch, s, rounds)?;
    Ok(GraphState {
        nodes: g.value(out.nodes).clone(),
        edges: g.value(out.edges).clone(),
        global: g.value(out.global).clone(),
    })
}
