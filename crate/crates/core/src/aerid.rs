//! Almost-everywhere reliable information dissemination: every honest node
//! broadcasts a payload by launching tokens; receivers decode by majority.

use crate::adversary::{Activity, Strategy, WalkPurpose};
use crate::engine::{Engine, Observer, RoundView};
use crate::error::Result;
use crate::graph::NodeId;
use crate::setting::Setting;
use crate::walk::{CapAudit, Shadow, Supply, Token, TokenKey, TokenTemplate, WalkNode, WalkOracle, WalkProtocol, WalkRecord};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};

/// Honest-side state that outlives a single walk.
#[derive(Clone, Debug)]
pub struct NodeMemory {
    pub blacklists: Vec<Vec<bool>>,
    pub next_seq: Vec<u32>,
    pub audit: CapAudit,
}

impl NodeMemory {
    pub fn new(n: usize, d: usize) -> NodeMemory {
        NodeMemory { blacklists: vec![vec![false; d]; n], next_seq: vec![0; n], audit: CapAudit::default() }
    }

    pub fn walk_nodes(&mut self, mut supply: impl FnMut(NodeId) -> Supply) -> Vec<WalkNode> {
        let d = self.blacklists.first().map_or(0, Vec::len);
        (0..self.blacklists.len())
            .map(|v| {
                let bl = std::mem::take(&mut self.blacklists[v]);
                WalkNode::new(d, bl, supply(v as NodeId), self.next_seq[v])
            })
            .collect()
    }

    pub fn absorb(&mut self, nodes: &mut [WalkNode]) {
        for (v, node) in nodes.iter_mut().enumerate() {
            self.blacklists[v] = std::mem::take(&mut node.blacklist);
            self.next_seq[v] = node.next_seq;
        }
    }
}

struct Both<'x>(&'x mut WalkOracle, &'x mut CapAudit);

impl Observer<WalkProtocol> for Both<'_> {
    fn after_round(&mut self, view: &RoundView<'_, WalkProtocol>) {
        self.0.after_round(view);
        self.1.after_round(view);
    }
}

/// Runs one walk through the engine with the cap audit and, optionally, the
/// token oracle attached.
pub fn run_walk(
    engine: &mut Engine<'_>,
    protocol: &WalkProtocol,
    nodes: &mut [WalkNode],
    strategy: &mut dyn Strategy,
    oracle: Option<&mut WalkOracle>,
    audit: &mut CapAudit,
) -> Result<()> {
    audit.sync(nodes);
    match oracle {
        Some(o) => {
            engine.run(protocol, nodes, strategy, &mut Both(&mut *o, audit))?;
            protocol.finish(nodes);
            o.finish(nodes);
        }
        None => {
            engine.run(protocol, nodes, strategy, audit)?;
            protocol.finish(nodes);
        }
    }
    Ok(())
}

/// Children created when a token is duplicated at a stage boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Duplication {
    pub parent: TokenKey,
    pub first_index: u32,
    pub count: u8,
}

impl Duplication {
    pub fn children(&self, at: NodeId) -> impl Iterator<Item = TokenKey> + '_ {
        (0..self.count as u32).map(move |k| TokenKey {
            source: self.parent.source,
            rank: self.parent.rank,
            counter: TokenKey::staged_counter(at, self.first_index + k),
            stage: self.parent.stage + 1,
        })
    }
}

#[derive(Clone, Debug, Default)]
pub struct DupTable {
    entries: Vec<Duplication>,
}

impl DupTable {
    fn from_entries(mut entries: Vec<Duplication>) -> DupTable {
        entries.sort_by_key(|e| e.parent);
        entries.dedup_by_key(|e| e.parent);
        DupTable { entries }
    }

    pub fn lookup(&self, parent: &TokenKey) -> Option<&Duplication> {
        self.entries.binary_search_by(|e| e.parent.cmp(parent)).ok().map(|i| &self.entries[i])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct StageStats {
    pub stage: usize,
    pub capacity: f64,
    pub max_holding_before: usize,
    pub kept: u64,
    pub dropped: u64,
    /// Largest number of good tokens carrying one source after the stage.
    pub max_good_per_source: u64,
    pub rounds: u64,
}

pub struct AeridOutcome {
    /// Final holdings per node.
    pub received: Vec<Vec<Token>>,
    /// Raw walk records per node, all stages.
    pub records: Vec<Vec<WalkRecord>>,
    pub dups: Vec<DupTable>,
    pub oracle: WalkOracle,
    pub stages: usize,
    pub stage_stats: Vec<StageStats>,
    pub rounds: u64,
}

/// Single-stage broadcast: each honest node launches `gamma n ceil(log n)`
/// tokens carrying `payloads[v]`, tagged with `ranks[v]`.
pub fn aerid_v1(
    engine: &mut Engine<'_>,
    s: &Setting<'_>,
    memory: &mut NodeMemory,
    payloads: &[u64],
    ranks: &[u32],
    strategy: &mut dyn Strategy,
    record: bool,
    record_paths: bool,
) -> Result<AeridOutcome> {
    let start = engine.round();
    let total = s.cfg.v1_total();
    let protocol = WalkProtocol::new(s.cap, s.rw_length, total, s.graph.d(), record);
    let mut oracle = WalkOracle::new(s.lens.clone(), record_paths);
    let byz = s.byzantine;
    let mut nodes = memory.walk_nodes(|v| {
        if byz.contains(v) {
            Supply::Held(VecDeque::new())
        } else {
            let template = TokenTemplate { rank: ranks[v as usize], stage: 0, payload: payloads[v as usize] };
            Supply::Fresh { template, remaining: total }
        }
    });
    strategy.begin(&Activity::Walk { purpose: WalkPurpose::Broadcast, stage: 0 });
    run_walk(engine, &protocol, &mut nodes, strategy, Some(&mut oracle), &mut memory.audit)?;
    memory.absorb(&mut nodes);
    let stats = StageStats {
        stage: 1,
        capacity: total as f64,
        max_good_per_source: max_good_per_source(&oracle, &nodes, 0),
        rounds: engine.round() - start,
        ..Default::default()
    };
    let (received, records) = nodes.into_iter().map(|n| (n.held, n.records)).unzip();
    Ok(AeridOutcome {
        received,
        records,
        dups: vec![DupTable::default(); s.graph.n()],
        oracle,
        stages: 1,
        stage_stats: vec![stats],
        rounds: engine.round() - start,
    })
}

/// Multi-stage broadcast with token duplication. Each honest node starts
/// with `lambda` tokens. Before stage `i` a node keeps at most
/// `(1 + delta) total(i-1)` of the tokens it holds, in arrival order, and
/// duplicates each kept token twice; the copies then walk.
pub fn aerid_v2(
    engine: &mut Engine<'_>,
    s: &Setting<'_>,
    memory: &mut NodeMemory,
    payloads: &[u64],
    ranks: &[u32],
    strategy: &mut dyn Strategy,
    record: bool,
    record_paths: bool,
) -> Result<AeridOutcome> {
    let start = engine.round();
    let n = s.graph.n();
    let lambda = s.cfg.lambda();
    let delta = s.cfg.delta();
    let stages = s.cfg.last_stage();
    let total = |i: usize| lambda as f64 * (2.0 * (1.0 + delta)).powi(i as i32);
    let mut oracle = WalkOracle::new(s.lens.clone(), record_paths).with_ledger(s.cfg.congestion_bound());
    let mut records: Vec<Vec<WalkRecord>> = vec![Vec::new(); n];
    let mut dup_entries: Vec<Vec<Duplication>> = vec![Vec::new(); n];
    let mut held: Vec<Vec<Token>> = vec![Vec::new(); n];
    for v in s.byzantine.complement() {
        let vi = v as usize;
        for k in 0..lambda as u32 {
            let key = TokenKey { source: v, rank: ranks[vi], counter: TokenKey::staged_counter(v, k), stage: 0 };
            let t = Token::new(key, payloads[vi], Shadow::new(v, memory.next_seq[vi], crate::walk::NO_INSTANCE));
            memory.next_seq[vi] += 1;
            oracle.register(&t);
            held[vi].push(t);
        }
    }
    let mut stage_stats = Vec::with_capacity(stages);
    for i in 1..=stages {
        let stage_start = engine.round();
        let keep = ((1.0 + delta) * total(i - 1)).floor() as usize;
        let mut st = StageStats { stage: i, capacity: total(i), ..Default::default() };
        let mut supplies: Vec<VecDeque<Token>> = vec![VecDeque::new(); n];
        for v in s.byzantine.complement() {
            let vi = v as usize;
            let mut tokens = std::mem::take(&mut held[vi]);
            st.max_holding_before = st.max_holding_before.max(tokens.len());
            if tokens.len() > keep {
                st.dropped += (tokens.len() - keep) as u64;
                tokens.truncate(keep);
            }
            st.kept += tokens.len() as u64;
            let q = &mut supplies[vi];
            for (j, parent) in tokens.iter().enumerate() {
                let first = 2 * j as u32;
                dup_entries[vi].push(Duplication { parent: parent.key, first_index: first, count: 2 });
                for c in 0..2u32 {
                    let key = TokenKey {
                        source: parent.key.source,
                        rank: parent.key.rank,
                        counter: TokenKey::staged_counter(v, first + c),
                        stage: i as u16,
                    };
                    let child = Token::new(key, parent.payload, Shadow::new(v, memory.next_seq[vi], parent.shadow.instance));
                    memory.next_seq[vi] += 1;
                    oracle.register(&child);
                    q.push_back(child);
                }
            }
        }
        let protocol = WalkProtocol::new(s.cap, s.rw_length, total(i).ceil() as usize, s.graph.d(), record);
        let mut nodes = memory.walk_nodes(|v| Supply::Held(std::mem::take(&mut supplies[v as usize])));
        strategy.begin(&Activity::Walk { purpose: WalkPurpose::Broadcast, stage: i as u16 });
        run_walk(engine, &protocol, &mut nodes, strategy, Some(&mut oracle), &mut memory.audit)?;
        oracle.end_stage();
        memory.absorb(&mut nodes);
        st.max_good_per_source = max_good_per_source(&oracle, &nodes, i as u16);
        st.rounds = engine.round() - stage_start;
        stage_stats.push(st);
        for (v, node) in nodes.into_iter().enumerate() {
            held[v] = node.held;
            records[v].extend(node.records);
        }
    }
    Ok(AeridOutcome {
        received: held,
        records,
        dups: dup_entries.into_iter().map(DupTable::from_entries).collect(),
        oracle,
        stages,
        stage_stats,
        rounds: engine.round() - start,
    })
}

fn max_good_per_source(oracle: &WalkOracle, nodes: &[WalkNode], stage: u16) -> u64 {
    let mut per_source: BTreeMap<NodeId, u64> = BTreeMap::new();
    for node in nodes {
        for t in &node.held {
            if t.key.stage == stage && oracle.is_good(t.shadow.instance) {
                *per_source.entry(t.key.source).or_default() += 1;
            }
        }
    }
    per_source.values().copied().max().unwrap_or(0)
}

/// Strict majority of payloads per claimed source; `None` when no payload
/// has more than half the receipts.
pub fn majority_decode<'a>(receipts: impl IntoIterator<Item = &'a Token>) -> BTreeMap<NodeId, Option<u64>> {
    let mut by_source: BTreeMap<NodeId, BTreeMap<u64, u64>> = BTreeMap::new();
    for t in receipts {
        *by_source.entry(t.key.source).or_default().entry(t.payload).or_default() += 1;
    }
    by_source
        .into_iter()
        .map(|(src, counts)| {
            let total: u64 = counts.values().sum();
            let winner = counts.into_iter().find(|&(_, c)| 2 * c > total).map(|(p, _)| p);
            (src, winner)
        })
        .collect()
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct DecodeReport {
    /// Honest sources decoded correctly, per honest receiver.
    pub correct: Vec<u32>,
    pub min_correct: u32,
    /// Receivers reaching `need` correct sources.
    pub receivers_ok: u32,
    /// `ceil(frac * n)`, used for both counts.
    pub need: u32,
    pub pass: bool,
}

/// Scores decoded payloads at each honest receiver: a receiver is fine when
/// it decodes at least `ceil(frac * n)` honest sources correctly, and the run
/// passes when at least that many receivers are fine.
pub fn decode_report(
    s: &Setting<'_>,
    outcome: &AeridOutcome,
    payloads: &[u64],
    frac: f64,
    keep: impl Fn(&Token) -> bool,
) -> DecodeReport {
    let honest = s.honest();
    let need = (frac * s.graph.n() as f64).ceil() as u32;
    let correct: Vec<u32> = honest
        .iter()
        .map(|&u| {
            let decoded = majority_decode(outcome.received[u as usize].iter().filter(|t| keep(t)));
            honest.iter().filter(|&&v| decoded.get(&v).copied().flatten() == Some(payloads[v as usize])).count() as u32
        })
        .collect();
    let receivers_ok = correct.iter().filter(|&&c| c >= need).count() as u32;
    DecodeReport {
        min_correct: correct.iter().copied().min().unwrap_or(0),
        receivers_ok,
        need,
        pass: receivers_ok >= need,
        correct,
    }
}
