//! Byzantine strategies. A strategy drives every protocol the honest nodes
//! run; it is told what is about to happen through `begin`.

use crate::coin::{CoinMessage, CoinSetup, FlipV1, FlipV2};
use crate::config::{AdversaryConfig, Variant};
use crate::engine::{Adversary, ByzantineOutbox, RoundView};
use crate::error::{Result, SimError};
use crate::graph::{Graph, NodeId, NodeSet};
use crate::rng::{stream, Purpose};
use crate::walk::{Shadow, Token, TokenKey, WalkProtocol, NO_INSTANCE, NO_PORT};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};
use std::collections::{BTreeMap, VecDeque};

pub const STRATEGIES: &[&str] = &["silent", "flooder", "token_corruptor", "coin_biaser", "tally_oscillator"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WalkPurpose {
    /// Token broadcast, including coin setup.
    Broadcast,
    /// Vote sampling in agreement phase `phase`.
    Sampling { phase: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activity {
    Walk { purpose: WalkPurpose, stage: u16 },
    CoinFlip { phase: u64, rank: u32 },
    Idle,
}

/// What the adversary knows about a coin before the flip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Forecast {
    /// Coins are not revealed in advance.
    Unknown,
    /// Good flip whose sender bit is already known.
    Fixed(u8),
    /// No honest node holds the rank.
    Vacant,
    /// Not good; bits the honest holders will send.
    Contested { ones: u32, zeros: u32 },
}

pub struct SamplingBrief<'a> {
    pub phase: u64,
    /// Current vote per node; byzantine entries are meaningless.
    pub votes: &'a [u8],
    pub honest: &'a [NodeId],
    pub threshold: f64,
    /// Tokens each honest node launches.
    pub samples_per_node: usize,
    pub rw_length: usize,
    pub coin_now: Forecast,
    pub coin_next: Forecast,
}

pub trait Strategy: Adversary<WalkProtocol> + Adversary<FlipV1> + Adversary<FlipV2> {
    fn name(&self) -> &str;
    fn begin(&mut self, _activity: &Activity) {}
    fn plan_sampling(&mut self, _brief: &SamplingBrief<'_>) {}
    /// Strong flags and local majorities of the sampling just finished.
    fn after_sampling(&mut self, _strong: &[bool], _majority: &[u8]) {}
}

pub fn from_config(cfg: &AdversaryConfig) -> Result<Box<dyn Strategy>> {
    let bad = |m: String| Err(SimError::Config(m));
    Ok(match cfg.name.as_str() {
        "silent" => Box::new(Silent),
        "flooder" => {
            let rate = cfg.f64("rate", 1.0);
            if !(rate > 0.0 && rate <= 64.0) {
                return bad(format!("flooder rate must lie in (0, 64], got {rate}"));
            }
            Box::new(Flooder { rate, activity: Activity::Idle, counter: 0 })
        }
        "token_corruptor" => {
            let forge = match cfg.str("forge", "none").as_str() {
                "none" => Forge::None,
                "random" => Forge::Random,
                "targeted" => Forge::Targeted,
                other => return bad(format!("unknown forge mode {other:?}")),
            };
            Box::new(Relayer::new(RelayMode::Corrupt { forge, pad: cfg.bool("pad", false) }, false))
        }
        "coin_biaser" => {
            let bit = cfg.f64("bit", 1.0);
            if bit != 0.0 && bit != 1.0 {
                return bad(format!("coin_biaser bit must be 0 or 1, got {bit}"));
            }
            Box::new(Relayer::new(RelayMode::Bias { bit: bit as u8 }, cfg.bool("claim_ranks", false)))
        }
        "tally_oscillator" => {
            let target = cfg.f64("target", 0.85);
            if !(0.5..1.0).contains(&target) {
                return bad(format!("tally_oscillator target must lie in [0.5, 1), got {target}"));
            }
            let claim = cfg.bool("claim_ranks", true);
            Box::new(Relayer::new(RelayMode::Oscillate(Box::new(Oscillator::new(target, claim))), claim))
        }
        other => return bad(format!("unknown adversary {other:?}; known: {}", STRATEGIES.join(", "))),
    })
}

fn adv_rng(seed: u64, b: NodeId, round: u64) -> ChaCha8Rng {
    stream(seed, Purpose::Adversary, b as u64, round)
}

fn honest_ports(g: &Graph, byz: &NodeSet, b: NodeId) -> Vec<usize> {
    (0..g.d()).filter(|&p| !byz.contains(g.neighbor(b, p))).collect()
}

fn forged_token(key: TokenKey, step: u16, payload: u64) -> Token {
    Token { key, step, payload, shadow: Shadow { instance: NO_INSTANCE, parent: NO_INSTANCE } }
}

pub struct Silent;

impl Adversary<WalkProtocol> for Silent {
    fn act(&mut self, _: &RoundView<'_, WalkProtocol>, _: &mut ByzantineOutbox<'_, Token>) -> Result<()> {
        Ok(())
    }
}

impl Adversary<FlipV1> for Silent {
    fn act(&mut self, _: &RoundView<'_, FlipV1>, _: &mut ByzantineOutbox<'_, CoinMessage>) -> Result<()> {
        Ok(())
    }
}

impl Adversary<FlipV2> for Silent {
    fn act(&mut self, _: &RoundView<'_, FlipV2>, _: &mut ByzantineOutbox<'_, CoinMessage>) -> Result<()> {
        Ok(())
    }
}

impl Strategy for Silent {
    fn name(&self) -> &str {
        "silent"
    }
}

/// Sends `ceil(rate * cap)` junk messages on every link every round and
/// swallows whatever reaches it.
pub struct Flooder {
    rate: f64,
    activity: Activity,
    counter: u64,
}

impl Flooder {
    fn junk_coins(&mut self, seed: u64, round: u64, g: &Graph, byz: &NodeSet, cap: usize, out: &mut ByzantineOutbox<'_, CoinMessage>) -> Result<()> {
        let k = (self.rate * cap as f64).ceil() as usize;
        for &b in byz.members() {
            let mut rng = adv_rng(seed, b, round);
            for p in honest_ports(g, byz, b) {
                for _ in 0..k {
                    let key = TokenKey { source: b, rank: rng.gen_range(1..=g.n() as u32), counter: rng.gen(), stage: 0 };
                    out.send_port(b, p, CoinMessage { key, step: 0, bit: rng.gen_range(0..2), forged: true })?;
                }
            }
        }
        Ok(())
    }
}

impl Adversary<WalkProtocol> for Flooder {
    fn act(&mut self, view: &RoundView<'_, WalkProtocol>, out: &mut ByzantineOutbox<'_, Token>) -> Result<()> {
        let k = (self.rate * view.protocol.cap as f64).ceil() as usize;
        let stage = match self.activity {
            Activity::Walk { stage, .. } => stage,
            _ => 0,
        };
        let n = view.graph.n() as u32;
        for &b in view.byzantine.members() {
            let mut rng = adv_rng(view.seed, b, view.round);
            for p in honest_ports(view.graph, view.byzantine, b) {
                for _ in 0..k {
                    self.counter += 1;
                    let key = TokenKey { source: b, rank: rng.gen_range(1..=n), counter: self.counter, stage };
                    out.send_port(b, p, forged_token(key, 0, rng.gen_range(0..2)))?;
                }
            }
        }
        Ok(())
    }
}

impl Adversary<FlipV1> for Flooder {
    fn act(&mut self, view: &RoundView<'_, FlipV1>, out: &mut ByzantineOutbox<'_, CoinMessage>) -> Result<()> {
        self.junk_coins(view.seed, view.round, view.graph, view.byzantine, view.protocol.setup.cap, out)
    }
}

impl Adversary<FlipV2> for Flooder {
    fn act(&mut self, view: &RoundView<'_, FlipV2>, out: &mut ByzantineOutbox<'_, CoinMessage>) -> Result<()> {
        self.junk_coins(view.seed, view.round, view.graph, view.byzantine, view.protocol.setup.cap, out)
    }
}

impl Strategy for Flooder {
    fn name(&self) -> &str {
        "flooder"
    }

    fn begin(&mut self, activity: &Activity) {
        self.activity = *activity;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Forge {
    None,
    /// Relabel relayed tokens with a random honest source.
    Random,
    /// Relabel relayed tokens with one fixed honest victim.
    Targeted,
}

/// A token a byzantine node sent to an honest neighbor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct BookEntry {
    key: TokenKey,
    step: u16,
    from: NodeId,
    port: u8,
}

/// Every token the byzantine side handed to honest nodes during broadcasts.
/// Honest walk records point back at these links, so they are the only
/// places a byzantine node can later inject a coin message that passes the
/// path filter.
#[derive(Default)]
struct KeyBook {
    entries: Vec<BookEntry>,
    sorted: bool,
    by_rank: BTreeMap<u32, Vec<u32>>,
}

impl KeyBook {
    fn note(&mut self, from: NodeId, port: usize, t: &Token) {
        self.entries.push(BookEntry { key: t.key, step: t.step, from, port: port as u8 });
        self.sorted = false;
    }

    fn seal(&mut self) {
        if self.sorted {
            return;
        }
        self.entries.sort_unstable();
        self.entries.dedup();
        self.by_rank.clear();
        for (i, e) in self.entries.iter().enumerate() {
            self.by_rank.entry(e.key.rank).or_default().push(i as u32);
        }
        self.sorted = true;
    }

    fn find(&self, key: &TokenKey, step: u16) -> &[BookEntry] {
        let lo = self.entries.partition_point(|e| (e.key, e.step) < (*key, step));
        let hi = self.entries.partition_point(|e| (e.key, e.step) <= (*key, step));
        &self.entries[lo..hi]
    }

    fn rank(&self, rank: u32) -> impl Iterator<Item = &BookEntry> + '_ {
        self.by_rank.get(&rank).into_iter().flatten().map(|&i| &self.entries[i as usize])
    }
}

/// Honest nodes a coin message injected at `(from, port)` would reach,
/// following the recorded walks (and duplications) to the end of the last
/// stage. Walks re-entering the byzantine side are not followed.
fn trace_endpoints(setup: &CoinSetup, g: &Graph, byz: &NodeSet, e: &BookEntry, out: &mut Vec<NodeId>) {
    let last_stage = if setup.variant == Variant::V1 { 0 } else { setup.stages as u16 };
    let mut stack = vec![(e.from, e.port as usize, e.key, e.step)];
    let mut budget = 4096;
    while let Some((from, port, key, step)) = stack.pop() {
        budget -= 1;
        if budget == 0 {
            break;
        }
        let w = g.neighbor(from, port);
        if byz.contains(w) {
            continue;
        }
        let back = g.reverse_port(from, port);
        let Some(rec) = setup.tables[w as usize].lookup(&key, step + 1) else { continue };
        if rec.in_port as usize != back {
            continue;
        }
        let mut terminal = vec![(key, step + 1, rec.out_port)];
        while let Some((key, at_step, out_port)) = terminal.pop() {
            if out_port != NO_PORT {
                stack.push((w, out_port as usize, key, at_step));
                continue;
            }
            if key.stage == last_stage {
                out.push(w);
                continue;
            }
            if let Some(dup) = setup.dups[w as usize].lookup(&key) {
                for child in dup.children(w) {
                    if let Some(r0) = setup.tables[w as usize].lookup(&child, 0) {
                        terminal.push((child, 0, r0.out_port));
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum OscMode {
    Faithful,
    Upfront,
}

/// Keeps honest votes split. With coins known in advance it aims, in every
/// phase, for a final vote split of `target` on the value opposite to the
/// next good coin; otherwise it keeps half the nodes strong and pushes the
/// coin against the strong majority.
pub struct Oscillator {
    target: f64,
    /// Whether init broadcasts claimed ranks, which frees vacant flips.
    claims: bool,
    mode: OscMode,
    honest: Vec<NodeId>,
    /// Value the sampling injection favours, and per-node injection level.
    inject_value: u8,
    inject_per_node: f64,
    samples_per_node: usize,
    /// Value the final split should favour.
    aim: u8,
    coin_now: Forecast,
    /// Coin output wanted at each node.
    desired: Vec<u8>,
    push: u8,
}

impl Oscillator {
    fn new(target: f64, claims: bool) -> Oscillator {
        Oscillator {
            target,
            claims,
            mode: OscMode::Faithful,
            honest: Vec::new(),
            inject_value: 0,
            inject_per_node: 0.0,
            samples_per_node: 0,
            aim: 0,
            coin_now: Forecast::Unknown,
            desired: Vec::new(),
            push: 0,
        }
    }

    /// The coin value the adversary cannot change, if any.
    fn pinned(&self, f: Forecast) -> Option<u8> {
        match f {
            Forecast::Unknown => None,
            Forecast::Fixed(c) => Some(c),
            Forecast::Vacant if self.claims => None,
            Forecast::Vacant => Some(0),
            Forecast::Contested { ones, .. } if ones == 0 => Some(0),
            Forecast::Contested { zeros, .. } if zeros == 0 => Some(1),
            Forecast::Contested { .. } => None,
        }
    }

    fn plan(&mut self, brief: &SamplingBrief<'_>, byzantine: usize) {
        let h = brief.honest.len() as f64;
        let ones = brief.honest.iter().filter(|&&v| brief.votes[v as usize] == 1).count() as f64;
        let m = u8::from(ones * 2.0 > h);
        let q = if m == 1 { ones / h } else { 1.0 - ones / h };
        self.honest = brief.honest.to_vec();
        self.samples_per_node = brief.samples_per_node;
        self.coin_now = brief.coin_now;
        self.mode = if brief.coin_now == Forecast::Unknown { OscMode::Faithful } else { OscMode::Upfront };
        // Aim for a fraction of honest nodes strong on value `v`.
        let (v, strong_target) = match self.mode {
            OscMode::Faithful => (m, 0.5),
            OscMode::Upfront => {
                self.aim = match self.pinned(brief.coin_next) {
                    Some(c) => 1 - c,
                    None => m,
                };
                match self.pinned(brief.coin_now) {
                    // Weak nodes follow the coin, so the split comes from
                    // nodes strong on the other value.
                    Some(c) => (1 - c, if self.aim == c { 1.0 - self.target } else { self.target }),
                    // The coin is ours; leave everyone weak.
                    None => (m, 0.0),
                }
            }
        };
        let p = if v == m { q } else { 1.0 - q };
        let absorb = 1.0 - (1.0 - byzantine as f64 / (h + byzantine as f64)).powi(brief.rw_length as i32);
        let r = brief.samples_per_node as f64 * (1.0 - absorb);
        let (same, per_node) = solve_injection(p, r, brief.threshold, strong_target);
        self.inject_value = if same { v } else { 1 - v };
        self.inject_per_node = per_node;
    }

    fn settle(&mut self, strong: &[bool], majority: &[u8]) {
        let n = strong.len();
        self.desired = vec![0; n];
        match self.mode {
            OscMode::Faithful => {
                let ones = self.honest.iter().filter(|&&v| strong[v as usize] && majority[v as usize] == 1).count();
                let zeros = self.honest.iter().filter(|&&v| strong[v as usize] && majority[v as usize] == 0).count();
                self.push = u8::from(ones <= zeros);
                self.desired = vec![self.push; n];
            }
            OscMode::Upfront => {
                let x = self.aim;
                let want = (self.target * self.honest.len() as f64).round() as usize;
                let mut have = self.honest.iter().filter(|&&v| strong[v as usize] && majority[v as usize] == x).count();
                for &v in &self.honest {
                    if strong[v as usize] {
                        continue;
                    }
                    self.desired[v as usize] = if have < want {
                        have += 1;
                        x
                    } else {
                        1 - x
                    };
                }
                self.push = match self.pinned(self.coin_now) {
                    Some(c) => 1 - c,
                    None => x,
                };
            }
        }
    }

    fn bit_for(&self, setup: &CoinSetup, g: &Graph, byz: &NodeSet, e: &BookEntry) -> u8 {
        if self.mode == OscMode::Faithful || self.desired.is_empty() {
            return self.push;
        }
        let mut ends = Vec::new();
        trace_endpoints(setup, g, byz, e, &mut ends);
        let ones = ends.iter().filter(|&&u| self.desired[u as usize] == 1).count();
        match (2 * ones).cmp(&ends.len()) {
            std::cmp::Ordering::Greater => 1,
            std::cmp::Ordering::Less => 0,
            std::cmp::Ordering::Equal => self.push,
        }
    }
}

/// Per-node injection so that the expected fraction of nodes strong on some
/// value `v` is `target`, where `q` is the share of `v` among honest votes.
/// Returns whether to inject `v` (else its opposite) and how many tokens.
/// Tallies are modelled as normal around the mean share of `v` in receipts.
pub fn solve_injection(q: f64, receipts: f64, threshold: f64, target: f64) -> (bool, f64) {
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let r = receipts.max(1.0);
    let strong = |inj: f64, with_m: bool| {
        let (mu, var) = if with_m {
            let mu = (q * r + inj) / (r + inj);
            (mu, (r * q * (1.0 - q) + inj * (1.0 - mu).powi(2)) / (r + inj).powi(2))
        } else {
            let mu = q * r / (r + inj);
            (mu, (r * q * (1.0 - q) + inj * mu * mu) / (r + inj).powi(2))
        };
        let sd = var.sqrt().max(1e-9);
        1.0 - std.cdf((threshold - mu) / sd)
    };
    let base = strong(0.0, true);
    let with_m = base < target;
    let hi_cap = 20.0 * r;
    let (mut lo, mut hi) = (0.0, hi_cap);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let s = strong(mid, with_m);
        let short = if with_m { s < target } else { s > target };
        if short {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (with_m, hi)
}

enum RelayMode {
    Corrupt { forge: Forge, pad: bool },
    Bias { bit: u8 },
    Oscillate(Box<Oscillator>),
}

/// Relays what honest neighbors hand it, at most `cap` per link per round.
/// The corruptor flips payloads. The coin variants relay init tokens
/// faithfully and remember what they sent so that in a flip they can answer
/// along those links; with `claim_ranks` they also pad spare capacity with
/// tokens claiming every rank.
pub struct Relayer {
    mode: RelayMode,
    claim_ranks: bool,
    activity: Activity,
    queues: BTreeMap<NodeId, VecDeque<Token>>,
    book: KeyBook,
    counter: u64,
    claim: u32,
    /// Coin messages waiting per `(byzantine node, port)`.
    coin_queues: BTreeMap<(NodeId, usize), VecDeque<CoinMessage>>,
    /// v2 only: messages keyed by the window they must go out in.
    windows: BTreeMap<(u16, u16), Vec<(NodeId, usize, CoinMessage)>>,
}

impl Relayer {
    fn new(mode: RelayMode, claim_ranks: bool) -> Relayer {
        Relayer {
            mode,
            claim_ranks,
            activity: Activity::Idle,
            queues: BTreeMap::new(),
            book: KeyBook::default(),
            counter: 0,
            claim: 0,
            coin_queues: BTreeMap::new(),
            windows: BTreeMap::new(),
        }
    }

    fn remembers(&self) -> bool {
        !matches!(self.mode, RelayMode::Corrupt { .. })
    }

    fn sampling(&self) -> bool {
        matches!(self.activity, Activity::Walk { purpose: WalkPurpose::Sampling { .. }, .. })
    }

    fn coin_bit(&self, setup: &CoinSetup, g: &Graph, byz: &NodeSet, e: &BookEntry) -> u8 {
        match &self.mode {
            RelayMode::Bias { bit } => *bit,
            RelayMode::Oscillate(o) => o.bit_for(setup, g, byz, e),
            RelayMode::Corrupt { .. } => 0,
        }
    }

    fn relayed_coin_bit(&self, incoming: u8) -> u8 {
        match &self.mode {
            RelayMode::Bias { bit } => *bit,
            RelayMode::Oscillate(o) => o.push,
            RelayMode::Corrupt { .. } => 1 - incoming.min(1),
        }
    }

    fn walk_broadcast(&mut self, view: &RoundView<'_, WalkProtocol>, out: &mut ByzantineOutbox<'_, Token>) -> Result<()> {
        let g = view.graph;
        let byz = view.byzantine;
        let cap = view.protocol.cap;
        let n = g.n() as u32;
        let stage = match self.activity {
            Activity::Walk { stage, .. } => stage,
            _ => 0,
        };
        let honest = byz.complement();
        let victim = honest.first().copied().unwrap_or(0);
        let (forge, pad) = match self.mode {
            RelayMode::Corrupt { forge, pad } => (forge, pad),
            _ => (Forge::None, self.claim_ranks),
        };
        let corrupt = matches!(self.mode, RelayMode::Corrupt { .. });
        let remember = self.remembers();
        for &b in byz.members() {
            let mut rng = adv_rng(view.seed, b, view.round);
            let ports = honest_ports(g, byz, b);
            if ports.is_empty() {
                continue;
            }
            let mut budget = vec![cap; ports.len()];
            let q = self.queues.entry(b).or_default();
            let mut slot = 0;
            while let Some(mut t) = q.pop_front() {
                let Some(i) = (0..ports.len()).map(|k| (slot + k) % ports.len()).find(|&i| budget[i] > 0) else {
                    q.push_front(t);
                    break;
                };
                slot = i + 1;
                budget[i] -= 1;
                if corrupt {
                    t.payload ^= 1;
                }
                t.step = t.step.saturating_add(1);
                match forge {
                    Forge::None => {}
                    Forge::Random => t.key.source = honest[rng.gen_range(0..honest.len())],
                    Forge::Targeted => t.key.source = victim,
                }
                if remember {
                    self.book.note(b, ports[i], &t);
                }
                out.send_port(b, ports[i], t)?;
            }
            q.truncate(4 * g.d() * cap);
            if pad {
                for (i, &p) in ports.iter().enumerate() {
                    for _ in 0..budget[i] {
                        self.claim = self.claim % n + 1;
                        self.counter += 1;
                        let source = match forge {
                            Forge::None => b,
                            Forge::Random => honest[rng.gen_range(0..honest.len())],
                            Forge::Targeted => victim,
                        };
                        let key = TokenKey { source, rank: self.claim, counter: self.counter, stage };
                        let t = forged_token(key, 0, self.claim as u64);
                        if remember {
                            self.book.note(b, p, &t);
                        }
                        out.send_port(b, p, t)?;
                    }
                }
            }
        }
        for &b in byz.members() {
            let q = self.queues.entry(b).or_default();
            for (_, w, msgs) in view.inbound(b) {
                if !byz.contains(w) {
                    q.extend(msgs.iter().copied());
                }
            }
        }
        Ok(())
    }

    fn walk_sampling(&mut self, view: &RoundView<'_, WalkProtocol>, out: &mut ByzantineOutbox<'_, Token>) -> Result<()> {
        let g = view.graph;
        let byz = view.byzantine;
        let cap = view.protocol.cap;
        match &self.mode {
            RelayMode::Oscillate(o) => {
                let rounds = (view.protocol.rw_length as u64 / 2).max(1);
                if view.local_round >= rounds {
                    return Ok(());
                }
                let links: usize = byz.members().iter().map(|&b| honest_ports(g, byz, b).len()).sum();
                if links == 0 {
                    return Ok(());
                }
                let volume = o.inject_per_node * o.honest.len() as f64;
                let k = ((volume / (links as f64 * rounds as f64)).ceil() as usize).min(cap);
                let value = o.inject_value as u64;
                for &b in byz.members() {
                    for p in honest_ports(g, byz, b) {
                        for _ in 0..k {
                            self.counter += 1;
                            let key = TokenKey { source: b, rank: 0, counter: self.counter, stage: 0 };
                            out.send_port(b, p, forged_token(key, 0, value))?;
                        }
                    }
                }
                Ok(())
            }
            // Relay sampled votes flipped; the biaser only cares about coins.
            RelayMode::Corrupt { .. } => self.walk_broadcast(view, out),
            RelayMode::Bias { .. } => Ok(()),
        }
    }

    /// Loads every remembered entry of the flip's rank.
    fn load_flip(&mut self, setup: &CoinSetup, g: &Graph, byz: &NodeSet, rank: u32) {
        self.book.seal();
        self.coin_queues.clear();
        self.windows.clear();
        let entries: Vec<BookEntry> = self.book.rank(rank).copied().collect();
        for e in entries {
            let bit = self.coin_bit(setup, g, byz, &e);
            let m = CoinMessage { key: e.key, step: e.step, bit, forged: true };
            match setup.variant {
                Variant::V1 => self.coin_queues.entry((e.from, e.port as usize)).or_default().push_back(m),
                Variant::V2 => self.windows.entry((e.key.stage, e.step)).or_default().push((e.from, e.port as usize, m)),
            }
        }
    }

    /// Answers coin messages honest nodes handed over, along the link the
    /// byzantine node used for that token.
    fn relay_coins<'m>(&self, b: NodeId, incoming: impl Iterator<Item = &'m CoinMessage>, sink: &mut Vec<(NodeId, usize, CoinMessage)>) {
        for m in incoming {
            for e in self.book.find(&m.key, m.step + 1) {
                if e.from == b {
                    sink.push((b, e.port as usize, CoinMessage { key: m.key, step: m.step + 1, bit: self.relayed_coin_bit(m.bit), forged: true }));
                }
            }
        }
    }
}

impl Adversary<WalkProtocol> for Relayer {
    fn act(&mut self, view: &RoundView<'_, WalkProtocol>, out: &mut ByzantineOutbox<'_, Token>) -> Result<()> {
        if self.sampling() {
            self.walk_sampling(view, out)
        } else {
            self.walk_broadcast(view, out)
        }
    }
}

impl Adversary<FlipV1> for Relayer {
    fn act(&mut self, view: &RoundView<'_, FlipV1>, out: &mut ByzantineOutbox<'_, CoinMessage>) -> Result<()> {
        if !self.remembers() {
            return Ok(());
        }
        let (g, byz) = (view.graph, view.byzantine);
        let setup = &view.protocol.setup;
        let rank = view.protocol.rank;
        if view.local_round == 0 {
            self.load_flip(setup, g, byz, rank);
        }
        let cap = setup.cap;
        for &b in byz.members() {
            for p in honest_ports(g, byz, b) {
                let q = self.coin_queues.entry((b, p)).or_default();
                // One message the filter must drop, per link, early on.
                let junk = usize::from(view.local_round < setup.rw_length as u64);
                if junk == 1 {
                    let key = TokenKey { source: b, rank: rank % g.n() as u32 + 1, counter: view.round, stage: 0 };
                    out.send_port(b, p, CoinMessage { key, step: 0, bit: 1, forged: true })?;
                }
                let k = (cap - junk).min(q.len());
                for m in q.drain(..k) {
                    out.send_port(b, p, m)?;
                }
            }
        }
        let mut relayed = Vec::new();
        for &b in byz.members() {
            for (_, w, msgs) in view.inbound(b) {
                if !byz.contains(w) {
                    self.relay_coins(b, msgs.iter(), &mut relayed);
                }
            }
        }
        for (b, p, m) in relayed {
            self.coin_queues.entry((b, p)).or_default().push_back(m);
        }
        Ok(())
    }
}

impl Adversary<FlipV2> for Relayer {
    fn act(&mut self, view: &RoundView<'_, FlipV2>, out: &mut ByzantineOutbox<'_, CoinMessage>) -> Result<()> {
        if !self.remembers() {
            return Ok(());
        }
        let (g, byz) = (view.graph, view.byzantine);
        let setup = &view.protocol.setup;
        let rank = view.protocol.rank;
        if view.local_round == 0 {
            self.load_flip(setup, g, byz, rank);
        }
        let (stage, step) = view.protocol.window(view.local_round);
        let bound = setup.congestion_bound;
        let mut sent: BTreeMap<(NodeId, usize), usize> = BTreeMap::new();
        for (b, p, m) in self.windows.remove(&(stage, step)).unwrap_or_default() {
            let c = sent.entry((b, p)).or_default();
            if *c < bound {
                *c += 1;
                out.send_port(b, p, m)?;
            }
        }
        let mut relayed = Vec::new();
        for &b in byz.members() {
            for (_, w, msgs) in view.inbound(b) {
                if !byz.contains(w) {
                    self.relay_coins(b, msgs.iter(), &mut relayed);
                }
            }
        }
        let (next_stage, next_step) = view.protocol.window(view.local_round + 1);
        for (b, p, m) in relayed {
            if m.key.stage == next_stage && m.step == next_step {
                self.windows.entry((next_stage, next_step)).or_default().push((b, p, m));
            }
        }
        Ok(())
    }
}

impl Strategy for Relayer {
    fn name(&self) -> &str {
        match self.mode {
            RelayMode::Corrupt { .. } => "token_corruptor",
            RelayMode::Bias { .. } => "coin_biaser",
            RelayMode::Oscillate(_) => "tally_oscillator",
        }
    }

    fn begin(&mut self, activity: &Activity) {
        self.activity = *activity;
        if matches!(activity, Activity::Walk { .. }) {
            self.queues.clear();
        }
    }

    fn plan_sampling(&mut self, brief: &SamplingBrief<'_>) {
        if let RelayMode::Oscillate(o) = &mut self.mode {
            o.plan(brief, brief.votes.len() - brief.honest.len());
        }
    }

    fn after_sampling(&mut self, strong: &[bool], majority: &[u8]) {
        if let RelayMode::Oscillate(o) = &mut self.mode {
            o.settle(strong, majority);
        }
    }
}
