use super::{Graph, NodeId};
use crate::error::{Result, SimError};
use crate::rng::{stream, NodeRng, Purpose};
use rand::seq::SliceRandom;
use rustc_hash::FxHashSet;

const MAX_ATTEMPTS: usize = 10_000;

/// Uniformly samples a simple connected `d`-regular graph on `n` nodes.
///
/// Stub pairing in the configuration model: unsuitable pairs (self-loops,
/// repeated edges) are returned to the pool and re-paired, and the whole
/// attempt restarts if no suitable pair is left. Disconnected results are
/// rejected as well.
pub fn generate_regular_expander(n: usize, d: usize, seed: u64) -> Result<Graph> {
    if d < 3 || d >= n || (n * d) % 2 == 1 {
        return Err(SimError::Config(format!(
            "need 3 <= d < n and n*d even, got n={n} d={d}"
        )));
    }
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = stream(seed, Purpose::Graph, attempt as u64, 0);
        let Some(edges) = try_pairing(n, d, &mut rng) else { continue };
        let g = Graph::from_edges(n, d, &edges)?;
        if g.is_connected() {
            return Ok(g);
        }
    }
    Err(SimError::GraphGeneration { n, d, attempts: MAX_ATTEMPTS })
}

fn try_pairing(n: usize, d: usize, rng: &mut NodeRng) -> Option<Vec<(NodeId, NodeId)>> {
    let mut edges: FxHashSet<(NodeId, NodeId)> = FxHashSet::default();
    let mut stubs: Vec<NodeId> = (0..n as NodeId).flat_map(|v| std::iter::repeat(v).take(d)).collect();
    while !stubs.is_empty() {
        stubs.shuffle(rng);
        let mut leftover = Vec::new();
        for pair in stubs.chunks_exact(2) {
            let (u, v) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
            if u != v && edges.insert((u, v)) {
                continue;
            }
            leftover.push(u);
            leftover.push(v);
        }
        if !leftover.is_empty() && !any_suitable(&leftover, &edges) {
            return None;
        }
        stubs = leftover;
    }
    let mut out: Vec<_> = edges.into_iter().collect();
    out.sort_unstable();
    Some(out)
}

fn any_suitable(stubs: &[NodeId], edges: &FxHashSet<(NodeId, NodeId)>) -> bool {
    let mut nodes: Vec<NodeId> = stubs.to_vec();
    nodes.sort_unstable();
    nodes.dedup();
    for (i, &u) in nodes.iter().enumerate() {
        for &v in &nodes[i + 1..] {
            if !edges.contains(&(u, v)) {
                return true;
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn produces_simple_connected_regular_graphs() {
        for seed in 0..20 {
            let g = generate_regular_expander(64, 6, seed).unwrap();
            assert_eq!(g.n(), 64);
            assert!(g.is_connected());
            assert_eq!(g.edges().count(), 64 * 3);
        }
    }

    #[test]
    fn same_seed_same_graph() {
        assert_eq!(generate_regular_expander(50, 4, 9).unwrap(), generate_regular_expander(50, 4, 9).unwrap());
        assert_ne!(generate_regular_expander(50, 4, 9).unwrap(), generate_regular_expander(50, 4, 10).unwrap());
    }

    #[test]
    fn rejects_odd_stub_count() {
        assert!(generate_regular_expander(9, 3, 0).is_err());
    }
}
