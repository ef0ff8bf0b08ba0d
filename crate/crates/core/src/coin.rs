//! Almost-everywhere common coin: ranks are broadcast once with recorded
//! walks; in each flip the nodes holding the designated rank send their bit
//! back along the recorded walks, and every hop checks the record.

use crate::adversary::{Activity, Strategy};
use crate::aerid::{aerid_v1, aerid_v2, DupTable, NodeMemory, StageStats};
use crate::config::Variant;
use crate::engine::{Engine, Inbox, Message, NodeCtx, Observer, Outbox, Protocol, RoundView};
use crate::error::Result;
use crate::graph::NodeId;
use crate::rng::{stream, NodeRng, Purpose};
use crate::setting::Setting;
use crate::transcript::Event;
use crate::walk::{TokenKey, WalkPathTable, WalkRecord, NO_PORT};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{HashSet, VecDeque};
use std::sync::Arc;

/// Uniform ranks in `1..=n` for honest nodes; byzantine entries are 0.
pub fn draw_ranks(n: usize, seed: u64, honest: &[NodeId]) -> Vec<u32> {
    let mut ranks = vec![0; n];
    for &v in honest {
        ranks[v as usize] = stream(seed, Purpose::Rank, v as u64, 0).gen_range(1..=n as u32);
    }
    ranks
}

/// Ranks held by exactly one of the given nodes.
pub fn unique_rank_count(ranks: &[u32], holders: &[NodeId], n: usize) -> usize {
    let mut counts = vec![0u32; n + 1];
    for &v in holders {
        counts[ranks[v as usize] as usize] += 1;
    }
    counts[1..].iter().filter(|&&c| c == 1).count()
}

/// Expected number of ranks held by exactly one of `h` uniform draws from `1..=n`.
pub fn expected_unique_ranks(n: usize, h: usize) -> f64 {
    let (n, h) = (n as f64, h as f64);
    n * (h / n) * (1.0 - 1.0 / n).powf(h - 1.0)
}

/// The rank designated in flip `phase` (1-based): phases cycle through `1..=n`.
pub fn designated_rank(phase: u64, n: usize) -> u32 {
    ((phase - 1) % n as u64) as u32 + 1
}

/// The bit a designated sender draws for a flip. Fixed by the seed before
/// the run starts.
pub fn sender_bit(seed: u64, node: NodeId, phase: u64) -> u8 {
    stream(seed, Purpose::CoinBit, node as u64, phase).gen_range(0..2)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CoinMessage {
    pub key: TokenKey,
    /// Step of the walk record at the sending node.
    pub step: u16,
    pub bit: u8,
    /// Oracle-only: emitted by a byzantine node.
    pub forged: bool,
}

impl Message for CoinMessage {
    fn wire_bits(&self) -> u64 {
        (4 + 4 + 8 + 2 + 2 + 1) * 8
    }

    fn trace_id(&self) -> u64 {
        self.key.counter ^ ((self.key.source as u64) << 40) ^ ((self.step as u64) << 24)
    }

    fn stamp_byzantine(&mut self, _: NodeId, _: u64) {
        self.forged = true;
    }
}

/// Accepts a message iff its rank is the designated one and the receiver
/// holds a record for the same token at the next step whose incoming link is
/// the link the message arrived on.
pub fn path_filter<'t>(table: &'t WalkPathTable, msg: &CoinMessage, in_port: usize, rank: u32) -> Option<&'t WalkRecord> {
    if msg.key.rank != rank || msg.bit > 1 {
        return None;
    }
    let rec = table.lookup(&msg.key, msg.step.checked_add(1)?)?;
    (rec.in_port as usize == in_port).then_some(rec)
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RankStatus {
    pub rank: u32,
    pub honest_holders: u32,
    pub sender: Option<NodeId>,
    /// Fraction of honest receivers where the sender's good tokens outnumber
    /// every other token claiming the rank.
    pub success: f64,
    pub low_congestion_success: f64,
    pub good: bool,
    pub low_congestion_good: bool,
}

pub struct CoinSetup {
    pub variant: Variant,
    pub n: usize,
    pub ranks: Vec<u32>,
    pub tables: Vec<WalkPathTable>,
    pub dups: Vec<DupTable>,
    pub stages: usize,
    pub lambda: usize,
    pub cap: usize,
    pub rw_length: usize,
    pub congestion_bound: usize,
    /// Rounds a v1 flip lasts.
    pub v1_rounds: u64,
    /// Rounds one v2 step window stands for.
    pub window_rounds: u64,
    pub ranks_status: Vec<RankStatus>,
    pub stage_stats: Vec<StageStats>,
    pub init_rounds: u64,
}

impl CoinSetup {
    pub fn status(&self, rank: u32) -> &RankStatus {
        &self.ranks_status[rank as usize - 1]
    }
}

/// Draws ranks and broadcasts them with recorded walks.
pub fn init_coin(
    engine: &mut Engine<'_>,
    s: &Setting<'_>,
    memory: &mut NodeMemory,
    strategy: &mut dyn Strategy,
) -> Result<CoinSetup> {
    let n = s.graph.n();
    let honest = s.honest();
    let ranks = draw_ranks(n, engine.seed, &honest);
    let payloads: Vec<u64> = ranks.iter().enumerate().map(|(v, &r)| (v as u64) << 32 | r as u64).collect();
    let outcome = match s.cfg.variant {
        Variant::V1 => aerid_v1(engine, s, memory, &payloads, &ranks, strategy, true, false)?,
        Variant::V2 => aerid_v2(engine, s, memory, &payloads, &ranks, strategy, true, false)?,
    };
    let final_stage = if s.cfg.variant == Variant::V1 { 0 } else { outcome.stages as u16 };

    // good[r][u]: sender's good tokens at u; other[r][u]: every other token claiming r at u.
    let mut holders = vec![Vec::new(); n + 1];
    for &v in &honest {
        holders[ranks[v as usize] as usize].push(v);
    }
    let mut good = vec![0u32; (n + 1) * n];
    let mut good_lc = vec![0u32; (n + 1) * n];
    let mut other = vec![0u32; (n + 1) * n];
    for &u in &honest {
        for t in &outcome.received[u as usize] {
            let r = t.key.rank as usize;
            if t.key.stage != final_stage || r == 0 || r > n {
                continue;
            }
            let i = r * n + u as usize;
            let from_sender = holders[r].len() == 1 && holders[r][0] == t.key.source;
            if from_sender && outcome.oracle.is_good(t.shadow.instance) {
                good[i] += 1;
                if outcome.oracle.is_low_congestion(t.shadow.instance) {
                    good_lc[i] += 1;
                }
            } else {
                other[i] += 1;
            }
        }
    }
    let need = 1.0 - s.cfg.fail_frac;
    let ranks_status = (1..=n)
        .map(|r| {
            let sender = (holders[r].len() == 1).then(|| holders[r][0]);
            let frac = |g: &[u32]| {
                let ok = honest.iter().filter(|&&u| g[r * n + u as usize] > other[r * n + u as usize]).count();
                ok as f64 / honest.len() as f64
            };
            let (success, lc) = if sender.is_some() { (frac(&good), frac(&good_lc)) } else { (0.0, 0.0) };
            RankStatus {
                rank: r as u32,
                honest_holders: holders[r].len() as u32,
                sender,
                success,
                low_congestion_success: lc,
                good: sender.is_some() && success >= need,
                low_congestion_good: sender.is_some() && lc >= need,
            }
        })
        .collect();

    let cap = s.cap;
    let bound = s.cfg.congestion_bound();
    Ok(CoinSetup {
        variant: s.cfg.variant,
        n,
        ranks,
        tables: outcome.records.into_iter().map(WalkPathTable::from_records).collect(),
        dups: outcome.dups,
        stages: outcome.stages,
        lambda: s.cfg.lambda(),
        cap,
        rw_length: s.rw_length,
        congestion_bound: bound,
        v1_rounds: (s.cfg.v1_total().div_ceil(cap) * s.rw_length) as u64,
        window_rounds: bound.div_ceil(cap) as u64,
        ranks_status,
        stage_stats: outcome.stage_stats,
        init_rounds: outcome.rounds,
    })
}

#[derive(Clone, Debug)]
pub struct FlipNode {
    queues: Vec<VecDeque<CoinMessage>>,
    stage_end: Vec<CoinMessage>,
    /// (key, step) pairs already accepted this flip.
    seen: HashSet<(TokenKey, u16)>,
    pub blacklist: Vec<bool>,
    pub counts: [u64; 2],
    pub delivered: u64,
    pub forwarded: u64,
    pub filtered: u64,
    pub discarded: u64,
}

impl FlipNode {
    fn new(blacklist: Vec<bool>) -> FlipNode {
        let d = blacklist.len();
        FlipNode {
            queues: (0..d).map(|_| VecDeque::new()).collect(),
            stage_end: Vec::new(),
            seen: HashSet::new(),
            blacklist,
            counts: [0; 2],
            delivered: 0,
            forwarded: 0,
            filtered: 0,
            discarded: 0,
        }
    }

    /// First sighting of a conforming message; replays are filtered.
    fn first(&mut self, m: &CoinMessage) -> bool {
        if self.seen.insert((m.key, m.step)) {
            true
        } else {
            self.filtered += 1;
            false
        }
    }

    fn deliver(&mut self, bit: u8) {
        self.counts[bit as usize] += 1;
        self.delivered += 1;
    }

    /// Majority of delivered bits; `None` on a tie or with nothing delivered.
    pub fn decision(&self) -> Option<u8> {
        match self.counts[0].cmp(&self.counts[1]) {
            std::cmp::Ordering::Greater => Some(0),
            std::cmp::Ordering::Less => Some(1),
            std::cmp::Ordering::Equal => None,
        }
    }
}

/// Flip over single-stage walks: FIFO per link, at most `cap` messages per
/// link per round, for as many rounds as the broadcast took.
pub struct FlipV1 {
    pub setup: Arc<CoinSetup>,
    pub phase: u64,
    pub rank: u32,
    pub senders: Vec<(NodeId, u8)>,
}

/// Flip over staged walks: one engine round per (stage, step) window, at
/// most `congestion_bound` messages per link per window; excess is dropped.
pub struct FlipV2 {
    pub setup: Arc<CoinSetup>,
    pub phase: u64,
    pub rank: u32,
    pub senders: Vec<(NodeId, u8)>,
}

impl FlipV2 {
    /// `(stage, step)` handled in window `w`.
    pub fn window(&self, w: u64) -> (u16, u16) {
        let l = self.setup.rw_length as u64;
        ((w / l + 1) as u16, (w % l) as u16)
    }

    fn fan_out(&self, at: NodeId, node: &mut FlipNode, parent: TokenKey, bit: u8) {
        let Some(dup) = self.setup.dups[at as usize].lookup(&parent) else { return };
        let table = &self.setup.tables[at as usize];
        for child in dup.children(at) {
            let Some(rec) = table.lookup(&child, 0) else { continue };
            if rec.in_port != NO_PORT {
                continue;
            }
            let m = CoinMessage { key: child, step: 0, bit, forged: false };
            if rec.out_port == NO_PORT {
                node.stage_end.push(m);
            } else {
                node.queues[rec.out_port as usize].push_back(m);
            }
        }
    }
}

fn sender_bit_of(senders: &[(NodeId, u8)], v: NodeId) -> Option<u8> {
    senders.iter().find(|(s, _)| *s == v).map(|&(_, b)| b)
}

impl Protocol for FlipV1 {
    type Msg = CoinMessage;
    type Node = FlipNode;

    fn rounds(&self) -> u64 {
        self.setup.v1_rounds
    }

    fn stage(&self, ctx: &NodeCtx, node: &mut FlipNode, _: &mut NodeRng, out: &mut Outbox<'_, CoinMessage>) {
        if ctx.local_round == 0 {
            if let Some(bit) = sender_bit_of(&self.senders, ctx.id) {
                let table = &self.setup.tables[ctx.id as usize];
                for rec in table.origins(ctx.id, self.rank) {
                    let m = CoinMessage { key: rec.key, step: 0, bit, forged: false };
                    if rec.out_port == NO_PORT {
                        node.deliver(bit);
                    } else {
                        node.queues[rec.out_port as usize].push_back(m);
                    }
                }
            }
        }
        let cap = self.setup.cap;
        for (p, q) in node.queues.iter_mut().enumerate() {
            let k = cap.min(q.len());
            for m in q.drain(..k) {
                out.push(p, m);
            }
        }
    }

    fn receive(&self, ctx: &NodeCtx, node: &mut FlipNode, _: &mut NodeRng, inbox: &Inbox<'_, CoinMessage>, log: &mut Vec<Event>) {
        let cap = self.setup.cap;
        let table = &self.setup.tables[ctx.id as usize];
        for p in 0..ctx.neighbors.len() {
            if node.blacklist[p] {
                continue;
            }
            let msgs = inbox.from_port(p);
            if msgs.len() > cap {
                node.blacklist[p] = true;
                log.push(Event::Blacklist { round: ctx.round, node: ctx.id, neighbor: inbox.link_sender(p) });
            }
            for m in &msgs[..msgs.len().min(cap)] {
                match path_filter(table, m, p, self.rank) {
                    Some(_) if !node.first(m) => {}
                    Some(rec) if rec.out_port == NO_PORT => node.deliver(m.bit),
                    Some(rec) => {
                        node.forwarded += 1;
                        node.queues[rec.out_port as usize].push_back(CoinMessage { step: m.step + 1, forged: false, ..*m });
                    }
                    None => node.filtered += 1,
                }
            }
        }
    }
}

impl Protocol for FlipV2 {
    type Msg = CoinMessage;
    type Node = FlipNode;

    fn rounds(&self) -> u64 {
        (self.setup.stages * self.setup.rw_length) as u64
    }

    fn stage(&self, ctx: &NodeCtx, node: &mut FlipNode, _: &mut NodeRng, out: &mut Outbox<'_, CoinMessage>) {
        let (stage, step) = self.window(ctx.local_round);
        if ctx.local_round == 0 {
            if let Some(bit) = sender_bit_of(&self.senders, ctx.id) {
                for k in 0..self.setup.lambda as u32 {
                    let parent = TokenKey { source: ctx.id, rank: self.rank, counter: TokenKey::staged_counter(ctx.id, k), stage: 0 };
                    self.fan_out(ctx.id, node, parent, bit);
                }
            }
        } else if step == 0 && stage > 1 {
            for m in std::mem::take(&mut node.stage_end) {
                self.fan_out(ctx.id, node, m.key, m.bit);
            }
        }
        let bound = self.setup.congestion_bound;
        for (p, q) in node.queues.iter_mut().enumerate() {
            let k = bound.min(q.len());
            for m in q.drain(..k) {
                out.push(p, m);
            }
            node.discarded += q.len() as u64;
            q.clear();
        }
    }

    fn receive(&self, ctx: &NodeCtx, node: &mut FlipNode, _: &mut NodeRng, inbox: &Inbox<'_, CoinMessage>, log: &mut Vec<Event>) {
        let (stage, step) = self.window(ctx.local_round);
        let bound = self.setup.congestion_bound;
        let table = &self.setup.tables[ctx.id as usize];
        for p in 0..ctx.neighbors.len() {
            if node.blacklist[p] {
                continue;
            }
            let msgs = inbox.from_port(p);
            if msgs.len() > bound {
                node.blacklist[p] = true;
                log.push(Event::Blacklist { round: ctx.round, node: ctx.id, neighbor: inbox.link_sender(p) });
            }
            for m in &msgs[..msgs.len().min(bound)] {
                if m.key.stage != stage || m.step != step {
                    node.filtered += 1;
                    continue;
                }
                match path_filter(table, m, p, self.rank) {
                    Some(_) if !node.first(m) => {}
                    Some(rec) => {
                        let next = CoinMessage { step: step + 1, forged: false, ..*m };
                        if rec.out_port == NO_PORT {
                            node.stage_end.push(next);
                        } else {
                            node.forwarded += 1;
                            node.queues[rec.out_port as usize].push_back(next);
                        }
                    }
                    None => node.filtered += 1,
                }
            }
        }
    }
}

/// Oracle check that honest nodes only ever forward messages matching their
/// own records.
#[derive(Default)]
pub struct FlipAudit {
    pub honest_sends: u64,
    pub nonconforming: u64,
}

impl FlipAudit {
    fn check(&mut self, setup: &CoinSetup, rank: u32, view_graph: &crate::graph::Graph, byz: &crate::graph::NodeSet, staged: &crate::engine::PortBuffers<CoinMessage>) {
        for v in 0..view_graph.n() as NodeId {
            if byz.contains(v) {
                continue;
            }
            let table = &setup.tables[v as usize];
            for p in 0..view_graph.d() {
                for m in staged.slot(v, p) {
                    self.honest_sends += 1;
                    let ok = m.key.rank == rank
                        && table.lookup(&m.key, m.step).is_some_and(|r| r.out_port as usize == p);
                    if !ok {
                        self.nonconforming += 1;
                    }
                }
            }
        }
    }
}

impl Observer<FlipV1> for FlipAudit {
    fn after_round(&mut self, view: &RoundView<'_, FlipV1>) {
        self.check(&view.protocol.setup, view.protocol.rank, view.graph, view.byzantine, view.staged);
    }
}

impl Observer<FlipV2> for FlipAudit {
    fn after_round(&mut self, view: &RoundView<'_, FlipV2>) {
        self.check(&view.protocol.setup, view.protocol.rank, view.graph, view.byzantine, view.staged);
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhaseOutcome {
    pub phase: u64,
    pub rank: u32,
    pub senders: Vec<(NodeId, u8)>,
    /// Per node; undecided nodes output 0. Byzantine entries are 0.
    pub outputs: Vec<u8>,
    pub decided: Vec<bool>,
    pub good: bool,
    pub low_congestion_good: bool,
    /// Largest fraction of honest nodes sharing one output.
    pub agreement: f64,
    pub majority_bit: u8,
    pub delivered: u64,
    pub forwarded: u64,
    pub filtered: u64,
    pub discarded: u64,
    pub nonconforming_forwards: u64,
    pub rounds: u64,
}

/// Runs flip number `phase` (1-based).
pub fn coin_flip(
    engine: &mut Engine<'_>,
    setup: &Arc<CoinSetup>,
    memory: &mut NodeMemory,
    phase: u64,
    strategy: &mut dyn Strategy,
) -> Result<PhaseOutcome> {
    let n = setup.n;
    let start = engine.round();
    let rank = designated_rank(phase, n);
    let honest: Vec<NodeId> = engine.honest().to_vec();
    let senders: Vec<(NodeId, u8)> = honest
        .iter()
        .filter(|&&v| setup.ranks[v as usize] == rank)
        .map(|&v| (v, sender_bit(engine.seed, v, phase)))
        .collect();
    let mut nodes: Vec<FlipNode> = (0..n).map(|v| FlipNode::new(std::mem::take(&mut memory.blacklists[v]))).collect();
    let mut audit = FlipAudit::default();
    strategy.begin(&Activity::CoinFlip { phase, rank });
    match setup.variant {
        Variant::V1 => {
            let p = FlipV1 { setup: Arc::clone(setup), phase, rank, senders: senders.clone() };
            engine.run(&p, &mut nodes, strategy, &mut audit)?;
        }
        Variant::V2 => {
            let p = FlipV2 { setup: Arc::clone(setup), phase, rank, senders: senders.clone() };
            let windows = p.rounds();
            engine.run(&p, &mut nodes, strategy, &mut audit)?;
            for node in nodes.iter_mut() {
                for m in std::mem::take(&mut node.stage_end) {
                    node.deliver(m.bit);
                }
            }
            engine.skip_rounds(windows * (setup.window_rounds.max(1) - 1))?;
        }
    }
    let mut outputs = vec![0u8; n];
    let mut decided = vec![false; n];
    let (mut delivered, mut forwarded, mut filtered, mut discarded) = (0, 0, 0, 0);
    for &v in &honest {
        let node = &nodes[v as usize];
        let dec = node.decision();
        outputs[v as usize] = dec.unwrap_or(0);
        decided[v as usize] = dec.is_some();
        delivered += node.delivered;
        forwarded += node.forwarded;
        filtered += node.filtered;
        discarded += node.discarded;
    }
    for (v, node) in nodes.into_iter().enumerate() {
        memory.blacklists[v] = node.blacklist;
    }
    let ones = honest.iter().filter(|&&v| outputs[v as usize] == 1).count();
    let majority_bit = u8::from(2 * ones > honest.len());
    let agree = ones.max(honest.len() - ones) as f64 / honest.len() as f64;
    let status = setup.status(rank);
    engine.transcript.push(Event::CoinAudit {
        flip: phase,
        delivered,
        forwarded,
        nonconforming_forwards: audit.nonconforming,
        filtered,
        discarded,
    });
    Ok(PhaseOutcome {
        phase,
        rank,
        senders,
        outputs,
        decided,
        good: status.good,
        low_congestion_good: status.low_congestion_good,
        agreement: agree,
        majority_bit,
        delivered,
        forwarded,
        filtered,
        discarded,
        nonconforming_forwards: audit.nonconforming,
        rounds: engine.round() - start,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_cycle_and_expectation() {
        assert_eq!(designated_rank(1, 8), 1);
        assert_eq!(designated_rank(8, 8), 8);
        assert_eq!(designated_rank(9, 8), 1);
        // n (h/n) (1 - 1/n)^(h - 1) with h = n = 4: 4 * (3/4)^3.
        assert!((expected_unique_ranks(4, 4) - 1.6875).abs() < 1e-12);
        let ranks = vec![1, 1, 2, 3];
        assert_eq!(unique_rank_count(&ranks, &[0, 1, 2, 3], 4), 2);
    }

    #[test]
    fn filter_requires_matching_record_and_link() {
        let key = TokenKey { source: 3, rank: 5, counter: 1, stage: 0 };
        let table = WalkPathTable::from_records(vec![WalkRecord { key, step: 2, in_port: 1, out_port: 0 }]);
        let m = CoinMessage { key, step: 1, bit: 1, forged: false };
        assert!(path_filter(&table, &m, 1, 5).is_some());
        assert!(path_filter(&table, &m, 0, 5).is_none());
        assert!(path_filter(&table, &m, 1, 4).is_none());
        assert!(path_filter(&table, &CoinMessage { step: 2, ..m }, 1, 5).is_none());
        assert!(path_filter(&table, &CoinMessage { bit: 2, ..m }, 1, 5).is_none());
    }
}
