use super::protocol::{WalkNode, WalkProtocol};
use crate::engine::{Observer, RoundView};
use crate::graph::NodeId;
use serde::{Deserialize, Serialize};

/// Per-round check of the cap and blacklist rules at every honest link end.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CapAudit {
    /// Link ends checked, summed over rounds.
    pub checks: u64,
    /// Rounds where a neighbor sent more than cap over one link.
    pub overruns: u64,
    /// Honest senders above cap on a link.
    pub honest_overruns: u64,
    /// Any deviation from: blacklisted on the overrun round, at most cap
    /// ingested then, nothing ingested afterwards, nothing blacklisted
    /// otherwise.
    pub failures: u64,
    /// Tokens ingested over links that were already blacklisted.
    pub ingested_after_blacklist: u64,
    #[serde(skip)]
    blocked: Vec<bool>,
}

impl CapAudit {
    /// Takes the blacklist state walks start from.
    pub fn sync(&mut self, nodes: &[WalkNode]) {
        self.blocked = nodes.iter().flat_map(|n| n.blacklist.iter().copied()).collect();
    }

    pub fn clean(&self) -> bool {
        self.failures == 0 && self.honest_overruns == 0
    }
}

impl Observer<WalkProtocol> for CapAudit {
    fn after_round(&mut self, view: &RoundView<'_, WalkProtocol>) {
        let g = view.graph;
        let d = g.d();
        let cap = view.protocol.cap;
        if self.blocked.len() != g.n() * d {
            self.blocked = view.nodes.iter().flat_map(|n| n.blacklist.iter().copied()).collect();
        }
        for w in 0..g.n() as NodeId {
            if view.byzantine.contains(w) {
                continue;
            }
            let node = &view.nodes[w as usize];
            for p in 0..d {
                let u = g.neighbor(w, p);
                let sent = view.staged.slot(u, g.reverse_port(w, p)).len();
                let ing = node.ingested[p] as usize;
                let i = w as usize * d + p;
                let before = self.blocked[i];
                let now = node.blacklist[p];
                self.checks += 1;
                if !view.byzantine.contains(u) && sent > cap {
                    self.honest_overruns += 1;
                }
                let ok = if before {
                    self.ingested_after_blacklist += ing as u64;
                    now && ing == 0
                } else if sent > cap {
                    self.overruns += 1;
                    now && ing == cap
                } else {
                    !now && ing == sent
                };
                if !ok {
                    self.failures += 1;
                }
                self.blocked[i] = now;
            }
        }
    }
}
