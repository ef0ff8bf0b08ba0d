use super::token::{Shadow, Token, TokenKey, NO_INSTANCE};
use crate::engine::{Inbox, NodeCtx, Outbox, Protocol};
use crate::graph::NodeId;
use crate::rng::NodeRng;
use crate::transcript::Event;
use rand::Rng;
use std::collections::VecDeque;

/// Port value meaning "created here" (for `in_port`) or "stopped here"
/// (for `out_port`).
pub const NO_PORT: u8 = u8::MAX;

/// What an honest node remembers about a token that passed through it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WalkRecord {
    pub key: TokenKey,
    /// Token step on arrival here.
    pub step: u16,
    pub in_port: u8,
    pub out_port: u8,
}

/// Template for tokens a node creates itself.
#[derive(Clone, Copy, Debug)]
pub struct TokenTemplate {
    pub rank: u32,
    pub stage: u16,
    pub payload: u64,
}

pub enum Supply {
    /// Create up to `remaining` fresh tokens.
    Fresh { template: TokenTemplate, remaining: usize },
    /// Inject tokens already held, in order.
    Held(VecDeque<Token>),
}

pub struct WalkNode {
    outboxes: Vec<VecDeque<(Token, u8)>>,
    /// Per port; persists across walks.
    pub blacklist: Vec<bool>,
    supply: Supply,
    /// Tokens whose walk ended here, in arrival order.
    pub held: Vec<Token>,
    pub records: Vec<WalkRecord>,
    /// Tokens accepted per port in the latest round.
    pub ingested: Vec<u32>,
    next_counter: u64,
    /// Next creator-local instance number.
    pub next_seq: u32,
}

impl WalkNode {
    pub fn new(d: usize, blacklist: Vec<bool>, supply: Supply, next_seq: u32) -> WalkNode {
        debug_assert_eq!(blacklist.len(), d);
        WalkNode {
            outboxes: (0..d).map(|_| VecDeque::new()).collect(),
            blacklist,
            supply,
            held: Vec::new(),
            records: Vec::new(),
            ingested: vec![0; d],
            next_counter: 0,
            next_seq,
        }
    }

    pub fn queued(&self) -> usize {
        self.outboxes.iter().map(VecDeque::len).sum()
    }

    pub fn queue_len(&self, port: usize) -> usize {
        self.outboxes[port].len()
    }
}

/// Capped random walks in phases of `rw_length` rounds.
///
/// There are `ceil(total / cap)` phases. At the start of each phase a node
/// injects up to `d * cap` tokens from its supply, each into the outbox of a
/// uniformly random neighbor. Every round it sends at most `cap` tokens per
/// outbox in FIFO order and accepts at most `cap` tokens per neighbor; a
/// neighbor that sends more is blacklisted and ignored from then on. Tokens
/// still queued when a phase ends stay where they are.
pub struct WalkProtocol {
    pub cap: usize,
    pub rw_length: usize,
    pub phases: usize,
    pub per_phase: usize,
    pub record: bool,
}

impl WalkProtocol {
    pub fn new(cap: usize, rw_length: usize, total: usize, d: usize, record: bool) -> WalkProtocol {
        assert!(cap > 0 && rw_length > 0);
        WalkProtocol { cap, rw_length, phases: total.div_ceil(cap).max(1), per_phase: d * cap, record }
    }

    fn end_phase(&self, node: &mut WalkNode) {
        for q in node.outboxes.iter_mut() {
            for (t, in_port) in q.drain(..) {
                if self.record {
                    node.records.push(WalkRecord { key: t.key, step: t.step, in_port, out_port: NO_PORT });
                }
                node.held.push(t);
            }
        }
    }

    fn start_phase(&self, ctx: &NodeCtx, node: &mut WalkNode, rng: &mut NodeRng) {
        let d = ctx.neighbors.len();
        let mut fresh = Vec::new();
        match &mut node.supply {
            Supply::Fresh { template, remaining } => {
                let k = self.per_phase.min(*remaining);
                *remaining -= k;
                for _ in 0..k {
                    let key = TokenKey {
                        source: ctx.id,
                        rank: template.rank,
                        counter: node.next_counter,
                        stage: template.stage,
                    };
                    node.next_counter += 1;
                    fresh.push(Token::new(key, template.payload, Shadow::new(ctx.id, node.next_seq, NO_INSTANCE)));
                    node.next_seq += 1;
                }
            }
            Supply::Held(q) => {
                let k = self.per_phase.min(q.len());
                fresh.extend(q.drain(..k));
            }
        }
        for t in fresh {
            let p = rng.gen_range(0..d);
            node.outboxes[p].push_back((t, NO_PORT));
        }
    }

    /// Ends the last phase; call once after the engine run.
    pub fn finish(&self, nodes: &mut [WalkNode]) {
        for node in nodes {
            self.end_phase(node);
        }
    }

    pub fn rounds_total(&self) -> u64 {
        (self.phases * self.rw_length) as u64
    }
}

impl Protocol for WalkProtocol {
    type Msg = Token;
    type Node = WalkNode;

    fn rounds(&self) -> u64 {
        self.rounds_total()
    }

    fn stage(&self, ctx: &NodeCtx, node: &mut WalkNode, rng: &mut NodeRng, out: &mut Outbox<'_, Token>) {
        if ctx.local_round % self.rw_length as u64 == 0 {
            self.end_phase(node);
            self.start_phase(ctx, node, rng);
        }
        for (p, q) in node.outboxes.iter_mut().enumerate() {
            let k = self.cap.min(q.len());
            for (t, in_port) in q.drain(..k) {
                if self.record {
                    node.records.push(WalkRecord { key: t.key, step: t.step, in_port, out_port: p as u8 });
                }
                out.push(p, t);
            }
        }
    }

    fn receive(&self, ctx: &NodeCtx, node: &mut WalkNode, rng: &mut NodeRng, inbox: &Inbox<'_, Token>, log: &mut Vec<Event>) {
        let d = ctx.neighbors.len();
        for p in 0..d {
            node.ingested[p] = 0;
            if node.blacklist[p] {
                continue;
            }
            let msgs = inbox.from_port(p);
            if msgs.len() > self.cap {
                node.blacklist[p] = true;
                log.push(Event::Blacklist { round: ctx.round, node: ctx.id, neighbor: inbox.link_sender(p) });
            }
            let k = msgs.len().min(self.cap);
            for t in &msgs[..k] {
                let mut t = *t;
                t.step = t.step.saturating_add(1);
                let out = rng.gen_range(0..d);
                node.outboxes[out].push_back((t, p as u8));
            }
            node.ingested[p] = k as u32;
        }
    }
}

/// Per-node table of walk records, sorted for lookup. When a key and step
/// repeat, the earliest record wins.
#[derive(Clone, Debug, Default)]
pub struct WalkPathTable {
    records: Vec<WalkRecord>,
}

impl WalkPathTable {
    pub fn from_records(mut records: Vec<WalkRecord>) -> WalkPathTable {
        records.sort_by_key(|r| (r.key, r.step));
        records.dedup_by_key(|r| (r.key, r.step));
        records.shrink_to_fit();
        WalkPathTable { records }
    }

    pub fn lookup(&self, key: &TokenKey, step: u16) -> Option<&WalkRecord> {
        self.records.binary_search_by(|r| (r.key, r.step).cmp(&(*key, step))).ok().map(|i| &self.records[i])
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &WalkRecord> {
        self.records.iter()
    }

    /// Records of tokens this node created (or started a stage with) for `rank`.
    pub fn origins<'a>(&'a self, source: NodeId, rank: u32) -> impl Iterator<Item = &'a WalkRecord> + 'a {
        let lo = self.records.partition_point(|r| (r.key.source, r.key.rank) < (source, rank));
        self.records[lo..]
            .iter()
            .take_while(move |r| r.key.source == source && r.key.rank == rank)
            .filter(|r| r.in_port == NO_PORT && r.step == 0)
    }
}
