use super::spectral::{mixing_time_of, step};
use super::{Graph, NodeId, NodeSet, ORACLE_CAP};
use crate::error::{Result, SimError};
use serde::{Deserialize, Serialize};

/// Largest connected set of honest nodes left after pruning nodes that lost
/// too many neighbors to the byzantine set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HonestCore {
    pub n: usize,
    /// Sorted global ids.
    pub members: Vec<NodeId>,
    /// Local adjacency, indices into `members`.
    pub adj: Vec<Vec<u32>>,
    pub edge_count: usize,
    /// deg_C(v) / 2|E_C| in `members` order.
    pub stationary: Vec<f64>,
    /// Exact 1/n^3 mixing time of the simple walk restricted to the core.
    pub mixing_time: usize,
    #[serde(skip)]
    local: Vec<Option<u32>>,
}

impl HonestCore {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, v: NodeId) -> bool {
        self.local_index(v).is_some()
    }

    pub fn local_index(&self, v: NodeId) -> Option<u32> {
        self.local.get(v as usize).copied().flatten()
    }

    pub fn mask(&self) -> Vec<bool> {
        self.local.iter().map(Option::is_some).collect()
    }
}

/// Removes `byzantine`, then repeatedly removes honest nodes that have lost
/// more than `theta * d` neighbors, and keeps the largest remaining component
/// (ties go to the component holding the smallest id).
pub fn extract_core(g: &Graph, byzantine: &NodeSet, theta: f64) -> Result<HonestCore> {
    let n = g.n();
    if n > ORACLE_CAP {
        return Err(SimError::OracleCap { n, cap: ORACLE_CAP });
    }
    let limit = theta * g.d() as f64;
    let mut removed = vec![false; n];
    let mut lost = vec![0usize; n];
    let mut queue: Vec<NodeId> = byzantine.members().to_vec();
    for &b in &queue {
        removed[b as usize] = true;
    }
    while let Some(v) = queue.pop() {
        for &w in g.neighbors(v) {
            let wi = w as usize;
            if removed[wi] {
                continue;
            }
            lost[wi] += 1;
            if lost[wi] as f64 > limit {
                removed[wi] = true;
                queue.push(w);
            }
        }
    }

    let mut comp = vec![usize::MAX; n];
    let mut best: Vec<NodeId> = Vec::new();
    for s in 0..n {
        if removed[s] || comp[s] != usize::MAX {
            continue;
        }
        comp[s] = s;
        let mut members = vec![s as NodeId];
        let mut i = 0;
        while i < members.len() {
            let v = members[i];
            i += 1;
            for &w in g.neighbors(v) {
                if !removed[w as usize] && comp[w as usize] == usize::MAX {
                    comp[w as usize] = s;
                    members.push(w);
                }
            }
        }
        if members.len() > best.len() {
            best = members;
        }
    }
    best.sort_unstable();
    if best.len() * 2 < n {
        return Err(SimError::CoreTooSmall { size: best.len(), half: n / 2 });
    }

    let mut local = vec![None; n];
    for (i, &v) in best.iter().enumerate() {
        local[v as usize] = Some(i as u32);
    }
    let adj: Vec<Vec<u32>> = best
        .iter()
        .map(|&v| g.neighbors(v).iter().filter_map(|&w| local[w as usize]).collect())
        .collect();
    let two_e: usize = adj.iter().map(Vec::len).sum();
    if adj.iter().any(Vec::is_empty) {
        return Err(SimError::CoreTooSmall { size: best.len(), half: n / 2 });
    }
    let stationary = adj.iter().map(|a| a.len() as f64 / two_e as f64).collect();
    let mixing_time = mixing_time_of(&adj, n, false, 3.0)?;
    Ok(HonestCore { n, members: best, adj, edge_count: two_e / 2, stationary, mixing_time, local })
}

/// Exact distribution, over core members, of a walk restricted to the core
/// after `steps` steps from `start`.
pub fn conditioned_walk_distribution(core: &HonestCore, start: NodeId, steps: usize) -> Result<Vec<f64>> {
    let s = core
        .local_index(start)
        .ok_or_else(|| SimError::Config(format!("start node {start} is not in the core")))?;
    let mut p = vec![0.0; core.len()];
    p[s as usize] = 1.0;
    let mut next = vec![0.0; core.len()];
    for _ in 0..steps {
        step(&core.adj, &p, &mut next, false);
        std::mem::swap(&mut p, &mut next);
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::generate_regular_expander;

    #[test]
    fn empty_byzantine_set_keeps_everything() {
        let g = generate_regular_expander(40, 4, 3).unwrap();
        let c = extract_core(&g, &NodeSet::empty(40), 0.5).unwrap();
        assert_eq!(c.len(), 40);
        assert_eq!(c.edge_count, 80);
        assert!((c.stationary.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pruning_cascades() {
        // theta = 0 drops any node that lost a neighbor, which cascades through K4.
        let g = Graph::from_edges(4, 3, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]).unwrap();
        let err = extract_core(&g, &NodeSet::new(4, [0]), 0.0).unwrap_err();
        assert!(matches!(err, SimError::CoreTooSmall { .. }));
        let c = extract_core(&g, &NodeSet::new(4, [0]), 0.34).unwrap();
        assert_eq!(c.members, vec![1, 2, 3]);
        assert!(c.adj.iter().all(|a| a.len() == 2));
    }
}
