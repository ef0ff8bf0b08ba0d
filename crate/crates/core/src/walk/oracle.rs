//! Ground truth about tokens, kept outside honest code.

use super::protocol::{WalkNode, WalkProtocol};
use super::token::{instance_creator, Token, TokenKey, NO_INSTANCE};
use crate::engine::{Observer, RoundView};
use crate::error::{Result, SimError};
use crate::graph::{HonestCore, NodeId};
use crate::metrics::{empirical, tv_distance};
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

const SEEN: u8 = 1;
const OUTSIDE: u8 = 2;
const ABSORBED: u8 = 4;
const CONGESTED: u8 = 8;
const IN_LENS: u8 = 16;

pub const NO_ENDPOINT: u32 = u32::MAX;

#[derive(Clone, Debug)]
pub struct Instance {
    pub key: TokenKey,
    pub parent: u64,
    pub hops: u16,
    pub crossings: u16,
    pub endpoint: u32,
    flags: u8,
}

impl Instance {
    const UNSEEN: Instance =
        Instance { key: TokenKey { source: 0, rank: 0, counter: 0, stage: 0 }, parent: NO_INSTANCE, hops: 0, crossings: 0, endpoint: NO_ENDPOINT, flags: 0 };

    pub fn seen(&self) -> bool {
        self.flags & SEEN != 0
    }

    /// Left the lens set, or started outside it.
    pub fn left_lens(&self) -> bool {
        self.flags & OUTSIDE != 0
    }

    /// Ended inside the byzantine set.
    pub fn absorbed(&self) -> bool {
        self.flags & ABSORBED != 0
    }

    pub fn congested(&self) -> bool {
        self.flags & CONGESTED != 0
    }
}

struct Ledger {
    bound: u32,
    counts: FxHashMap<u64, u32>,
    hops: Vec<(u64, u64)>,
}

#[inline]
fn ledger_key(edge: u32, step: u16, source: NodeId) -> u64 {
    ((edge as u64) << 40) | ((step.min(255) as u64) << 32) | source as u64
}

/// Tracks every token instance: its true creator, how far it went, whether
/// it ever left the lens set (normally the honest core), where it ended,
/// and optionally per-(step, edge, source) congestion.
pub struct WalkOracle {
    lens: Vec<bool>,
    table: Vec<Vec<Instance>>,
    paths: Option<FxHashMap<u64, Vec<NodeId>>>,
    ledger: Option<Ledger>,
}

impl WalkOracle {
    /// `lens` is membership in the reference set, usually the honest core.
    pub fn new(lens: Vec<bool>, record_paths: bool) -> WalkOracle {
        let n = lens.len();
        WalkOracle {
            lens,
            table: (0..n).map(|_| Vec::new()).collect(),
            paths: record_paths.then(FxHashMap::default),
            ledger: None,
        }
    }

    pub fn with_ledger(mut self, congestion_bound: usize) -> WalkOracle {
        self.ledger = Some(Ledger { bound: congestion_bound as u32, counts: FxHashMap::default(), hops: Vec::new() });
        self
    }

    pub fn lens(&self) -> &[bool] {
        &self.lens
    }

    fn entry(&mut self, t: &Token) -> &mut Instance {
        let id = t.shadow.instance;
        let creator = instance_creator(id) as usize;
        let seq = (id & 0xFFFF_FFFF) as usize;
        let row = &mut self.table[creator];
        if row.len() <= seq {
            row.resize(seq + 1, Instance::UNSEEN);
        }
        let inst = &mut row[seq];
        if !inst.seen() {
            let inside = self.lens[creator];
            inst.key = t.key;
            inst.parent = t.shadow.parent;
            inst.flags = SEEN | if inside { IN_LENS } else { OUTSIDE };
            if let Some(paths) = self.paths.as_mut() {
                paths.insert(id, vec![creator as NodeId]);
            }
        }
        inst
    }

    /// Registers a token created at `at` before it moves.
    pub fn register(&mut self, t: &Token) {
        self.entry(t);
    }

    fn hop(&mut self, t: &Token, to: NodeId, edge: u32, absorbed: bool) {
        let to_inside = self.lens[to as usize];
        let inst = self.entry(t);
        inst.hops = inst.hops.saturating_add(1);
        let was_inside = inst.flags & IN_LENS != 0;
        if was_inside != to_inside {
            inst.crossings = inst.crossings.saturating_add(1);
        }
        if to_inside {
            inst.flags |= IN_LENS;
        } else {
            inst.flags = (inst.flags & !IN_LENS) | OUTSIDE;
        }
        if absorbed {
            inst.flags |= ABSORBED;
        }
        if let Some(paths) = self.paths.as_mut() {
            paths.get_mut(&t.shadow.instance).expect("registered").push(to);
        }
        if let Some(l) = self.ledger.as_mut() {
            let k = ledger_key(edge, t.step, t.key.source);
            *l.counts.entry(k).or_insert(0) += 1;
            l.hops.push((t.shadow.instance, k));
        }
    }

    /// Records where every held token ended.
    pub fn finish(&mut self, nodes: &[WalkNode]) {
        for (w, node) in nodes.iter().enumerate() {
            for t in &node.held {
                self.entry(t).endpoint = w as u32;
            }
        }
    }

    /// Flags instances that crossed an over-congested (step, edge, source)
    /// slot since the last call.
    pub fn end_stage(&mut self) {
        let Some(mut l) = self.ledger.take() else { return };
        for &(id, k) in &l.hops {
            if l.counts[&k] > l.bound {
                if let Some(inst) = self.get_mut(id) {
                    inst.flags |= CONGESTED;
                }
            }
        }
        l.counts.clear();
        l.hops.clear();
        self.ledger = Some(l);
    }

    pub fn get(&self, id: u64) -> Option<&Instance> {
        let row = self.table.get(instance_creator(id) as usize)?;
        row.get((id & 0xFFFF_FFFF) as usize).filter(|i| i.seen())
    }

    fn get_mut(&mut self, id: u64) -> Option<&mut Instance> {
        let row = self.table.get_mut(instance_creator(id) as usize)?;
        row.get_mut((id & 0xFFFF_FFFF) as usize).filter(|i| i.seen())
    }

    /// Created inside the lens and never left it, and so were its ancestors.
    pub fn is_good(&self, id: u64) -> bool {
        let mut id = id;
        loop {
            match self.get(id) {
                Some(inst) if !inst.left_lens() && !inst.absorbed() => {
                    if inst.parent == NO_INSTANCE {
                        return true;
                    }
                    id = inst.parent;
                }
                _ => return false,
            }
        }
    }

    /// No congested slot anywhere in its lineage.
    pub fn is_low_congestion(&self, id: u64) -> bool {
        let mut id = id;
        loop {
            match self.get(id) {
                Some(inst) if !inst.congested() => {
                    if inst.parent == NO_INSTANCE {
                        return true;
                    }
                    id = inst.parent;
                }
                _ => return false,
            }
        }
    }

    pub fn instances(&self) -> impl Iterator<Item = (u64, &Instance)> {
        self.table.iter().enumerate().flat_map(|(c, row)| {
            row.iter()
                .enumerate()
                .filter(|(_, i)| i.seen())
                .map(move |(s, i)| (((c as u64) << 32) | s as u64, i))
        })
    }

    pub fn path(&self, id: u64) -> Option<&[NodeId]> {
        self.paths.as_ref()?.get(&id).map(Vec::as_slice)
    }

    pub fn has_paths(&self) -> bool {
        self.paths.is_some()
    }
}

impl Observer<WalkProtocol> for WalkOracle {
    fn after_round(&mut self, view: &RoundView<'_, WalkProtocol>) {
        let g = view.graph;
        for v in 0..g.n() as NodeId {
            for p in 0..g.d() {
                let msgs = view.staged.slot(v, p);
                if msgs.is_empty() {
                    continue;
                }
                let w = g.neighbor(v, p);
                let edge = g.edge_id(v, p);
                if view.byzantine.contains(w) {
                    for t in msgs {
                        self.hop(t, w, edge, true);
                    }
                } else {
                    let k = view.nodes[w as usize].ingested[g.reverse_port(v, p)] as usize;
                    for t in &msgs[..k] {
                        self.hop(t, w, edge, false);
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenClassification {
    /// Fresh tokens created by core members.
    pub initiated_in_core: u64,
    /// Of those, tokens that stayed in the core and ended there.
    pub good: u64,
    pub bad: u64,
    /// Tokens, of any origin, that entered or left the core at least once.
    pub crossing: u64,
    /// Core-created tokens that left the core at least once.
    pub core_crossing: u64,
}

/// Splits tokens into good and bad with respect to `core`.
pub fn classify_tokens(oracle: &WalkOracle, core: &HonestCore) -> Result<TokenClassification> {
    let mask = core.mask();
    let lens_matches = mask == oracle.lens;
    if !lens_matches && !oracle.has_paths() {
        return Err(SimError::Transcript("oracle lens differs from the core and no paths were kept".into()));
    }
    let mut c = TokenClassification::default();
    for (id, inst) in oracle.instances() {
        let creator = instance_creator(id);
        let (good, crossing) = if lens_matches {
            (oracle.is_good(id), inst.crossings > 0)
        } else {
            let path = oracle.path(id).expect("paths kept");
            let inside: Vec<bool> = path.iter().map(|&v| mask[v as usize]).collect();
            let good = inside.iter().all(|&x| x) && !inst.absorbed() && inst.parent == NO_INSTANCE;
            (good, inside.windows(2).any(|w| w[0] != w[1]))
        };
        if crossing {
            c.crossing += 1;
        }
        if mask[creator as usize] && inst.parent == NO_INSTANCE {
            c.initiated_in_core += 1;
            if crossing {
                c.core_crossing += 1;
            }
            if good {
                c.good += 1;
            } else {
                c.bad += 1;
            }
        }
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndpointTest {
    pub tv: f64,
    pub tokens: u64,
    pub pass: bool,
}

/// Compares where good tokens ended with the stationary distribution of the core.
pub fn endpoint_distribution_test(oracle: &WalkOracle, core: &HonestCore, tolerance: f64) -> EndpointTest {
    let mut counts = vec![0u64; core.len()];
    for (id, inst) in oracle.instances() {
        if inst.endpoint == NO_ENDPOINT || !oracle.is_good(id) {
            continue;
        }
        if let Some(i) = core.local_index(inst.endpoint) {
            counts[i as usize] += 1;
        }
    }
    let tokens = counts.iter().sum();
    let tv = tv_distance(&empirical(&counts), &core.stationary);
    EndpointTest { tv, tokens, pass: tv <= tolerance }
}
