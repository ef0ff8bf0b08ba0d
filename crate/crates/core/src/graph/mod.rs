//! d-regular topology, honest core extraction and exact walk oracles.

mod core;
mod generate;
mod io;
mod spectral;

pub use self::core::{conditioned_walk_distribution, extract_core, HonestCore};
pub use generate::generate_regular_expander;
pub use io::{read_graph, write_graph};
pub use spectral::{mixing_time_of, spectral_profile, SpectralProfile, ORACLE_CAP};

use crate::error::{Result, SimError};
use serde::{Deserialize, Serialize};

pub type NodeId = u32;

/// Simple undirected d-regular graph with ordered adjacency lists.
///
/// Port `p` of node `v` is its `p`-th smallest neighbor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    d: usize,
    adj: Vec<NodeId>,
    rev: Vec<u16>,
    edge_id: Vec<u32>,
}

impl Graph {
    /// Builds a graph from an undirected edge list, checking simplicity and regularity.
    pub fn from_edges(n: usize, d: usize, edges: &[(NodeId, NodeId)]) -> Result<Graph> {
        if n == 0 || d == 0 || d >= n {
            return Err(SimError::Config(format!("need 0 < d < n, got n={n} d={d}")));
        }
        if edges.len() * 2 != n * d {
            return Err(SimError::GraphFormat(format!(
                "{} edges cannot form a {d}-regular graph on {n} nodes",
                edges.len()
            )));
        }
        let mut lists: Vec<Vec<NodeId>> = vec![Vec::with_capacity(d); n];
        for &(u, v) in edges {
            if u as usize >= n || v as usize >= n {
                return Err(SimError::GraphFormat(format!("edge ({u},{v}) out of range")));
            }
            if u == v {
                return Err(SimError::GraphFormat(format!("self-loop at {u}")));
            }
            lists[u as usize].push(v);
            lists[v as usize].push(u);
        }
        let mut adj = Vec::with_capacity(n * d);
        for (v, list) in lists.iter_mut().enumerate() {
            list.sort_unstable();
            if list.len() != d {
                return Err(SimError::GraphFormat(format!("node {v} has degree {}", list.len())));
            }
            if list.windows(2).any(|w| w[0] == w[1]) {
                return Err(SimError::GraphFormat(format!("multi-edge at node {v}")));
            }
            adj.extend_from_slice(list);
        }
        let mut g = Graph { n, d, adj, rev: vec![0; n * d], edge_id: vec![0; n * d] };
        let mut next_edge = 0u32;
        for v in 0..n {
            for p in 0..d {
                let w = g.adj[v * d + p];
                let q = g.port_of(w, v as NodeId).expect("symmetric adjacency");
                g.rev[v * d + p] = q as u16;
                if (v as NodeId) < w {
                    g.edge_id[v * d + p] = next_edge;
                    g.edge_id[w as usize * d + q] = next_edge;
                    next_edge += 1;
                }
            }
        }
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn edge_count(&self) -> usize {
        self.n * self.d / 2
    }

    #[inline]
    pub fn neighbors(&self, v: NodeId) -> &[NodeId] {
        let s = v as usize * self.d;
        &self.adj[s..s + self.d]
    }

    #[inline]
    pub fn neighbor(&self, v: NodeId, port: usize) -> NodeId {
        self.adj[v as usize * self.d + port]
    }

    pub fn port_of(&self, v: NodeId, w: NodeId) -> Option<usize> {
        self.neighbors(v).binary_search(&w).ok()
    }

    /// Port at `neighbor(v, port)` that leads back to `v`.
    #[inline]
    pub fn reverse_port(&self, v: NodeId, port: usize) -> usize {
        self.rev[v as usize * self.d + port] as usize
    }

    /// Undirected edge id of the link behind `(v, port)`, dense in `0..edge_count()`.
    #[inline]
    pub fn edge_id(&self, v: NodeId, port: usize) -> u32 {
        self.edge_id[v as usize * self.d + port]
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        self.port_of(u, v).is_some()
    }

    /// Edges `(u, v)` with `u < v` in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        (0..self.n as NodeId)
            .flat_map(move |u| self.neighbors(u).iter().filter(move |&&v| u < v).map(move |&v| (u, v)))
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut stack = vec![0 as NodeId];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &w in self.neighbors(v) {
                if !seen[w as usize] {
                    seen[w as usize] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        count == self.n
    }
}

/// A fixed set of nodes with O(1) membership.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSet {
    members: Vec<NodeId>,
    #[serde(skip)]
    mask: Vec<bool>,
    n: usize,
}

impl NodeSet {
    pub fn new(n: usize, members: impl IntoIterator<Item = NodeId>) -> NodeSet {
        let mut mask = vec![false; n];
        for v in members {
            mask[v as usize] = true;
        }
        let members = (0..n as NodeId).filter(|&v| mask[v as usize]).collect();
        NodeSet { members, mask, n }
    }

    pub fn empty(n: usize) -> NodeSet {
        NodeSet::new(n, [])
    }

    #[inline]
    pub fn contains(&self, v: NodeId) -> bool {
        self.mask[v as usize]
    }

    pub fn members(&self) -> &[NodeId] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn universe(&self) -> usize {
        self.n
    }

    pub fn complement(&self) -> Vec<NodeId> {
        (0..self.n as NodeId).filter(|&v| !self.contains(v)).collect()
    }
}
