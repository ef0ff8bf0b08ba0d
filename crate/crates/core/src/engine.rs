//! Synchronous-round engine with a rushing, full-information adversary.
//!
//! Each round: honest nodes stage messages, the adversary sees everything
//! (including every honest random stream of the round) and stages messages
//! for byzantine nodes, then all messages are delivered and honest nodes
//! update. Honest code only sees its own state, its ports and its stream.

use crate::error::{Result, SimError};
use crate::graph::{Graph, NodeId, NodeSet};
use crate::rng::{node_round, NodeRng};
use crate::transcript::{Event, Transcript};

pub trait Message: Clone {
    fn wire_bits(&self) -> u64;
    /// Identity written to full transcripts.
    fn trace_id(&self) -> u64;
    /// Marks a message as emitted by byzantine node `from`; `seq` is a
    /// per-node counter maintained by the engine.
    fn stamp_byzantine(&mut self, from: NodeId, seq: u64);
}

/// What an honest node knows about itself.
pub struct NodeCtx<'a> {
    pub id: NodeId,
    pub neighbors: &'a [NodeId],
    /// Round within the current protocol instance.
    pub local_round: u64,
    pub round: u64,
}

pub trait Protocol {
    type Msg: Message;
    type Node;

    fn rounds(&self) -> u64;

    fn stage(&self, ctx: &NodeCtx, node: &mut Self::Node, rng: &mut NodeRng, out: &mut Outbox<'_, Self::Msg>);

    fn receive(
        &self,
        ctx: &NodeCtx,
        node: &mut Self::Node,
        rng: &mut NodeRng,
        inbox: &Inbox<'_, Self::Msg>,
        log: &mut Vec<Event>,
    );
}

/// Messages staged this round, one slot per directed link `(v, port)`.
pub struct PortBuffers<M> {
    d: usize,
    slots: Vec<Vec<M>>,
}

impl<M> PortBuffers<M> {
    pub fn new(n: usize, d: usize) -> Self {
        PortBuffers { d, slots: (0..n * d).map(|_| Vec::new()).collect() }
    }

    #[inline]
    pub fn slot(&self, v: NodeId, port: usize) -> &[M] {
        &self.slots[v as usize * self.d + port]
    }

    fn node_slots_mut(&mut self, v: NodeId) -> &mut [Vec<M>] {
        let s = v as usize * self.d;
        &mut self.slots[s..s + self.d]
    }

    fn clear(&mut self) {
        self.slots.iter_mut().for_each(Vec::clear);
    }
}

pub struct Outbox<'a, M> {
    slots: &'a mut [Vec<M>],
}

impl<M> Outbox<'_, M> {
    #[inline]
    pub fn push(&mut self, port: usize, msg: M) {
        self.slots[port].push(msg);
    }

    pub fn len(&self, port: usize) -> usize {
        self.slots[port].len()
    }
}

/// Messages arriving at one node, by local port.
pub struct Inbox<'a, M> {
    graph: &'a Graph,
    node: NodeId,
    buffers: &'a PortBuffers<M>,
}

impl<M> Inbox<'_, M> {
    /// Messages sent to this node over the link at `port`, in send order.
    #[inline]
    pub fn from_port(&self, port: usize) -> &[M] {
        let w = self.graph.neighbor(self.node, port);
        self.buffers.slot(w, self.graph.reverse_port(self.node, port))
    }

    /// The link-level sender; unforgeable.
    pub fn link_sender(&self, port: usize) -> NodeId {
        self.graph.neighbor(self.node, port)
    }
}

/// Everything the adversary may look at in a round.
pub struct RoundView<'a, P: Protocol> {
    pub round: u64,
    pub local_round: u64,
    pub graph: &'a Graph,
    pub byzantine: &'a NodeSet,
    pub seed: u64,
    pub protocol: &'a P,
    pub nodes: &'a [P::Node],
    pub staged: &'a PortBuffers<P::Msg>,
}

impl<P: Protocol> RoundView<'_, P> {
    /// The random stream honest node `v` uses this round, from its start.
    pub fn node_rng(&self, v: NodeId) -> NodeRng {
        node_round(self.seed, v, self.round)
    }

    /// Messages honest neighbors staged to byzantine node `b` this round,
    /// as `(port at b, sender, messages)`.
    pub fn inbound(&self, b: NodeId) -> impl Iterator<Item = (usize, NodeId, &[P::Msg])> + '_ {
        (0..self.graph.d()).map(move |q| {
            let w = self.graph.neighbor(b, q);
            (q, w, self.staged.slot(w, self.graph.reverse_port(b, q)))
        })
    }
}

/// Send handle for byzantine nodes. Only byzantine nodes may send and only
/// over their own links.
pub struct ByzantineOutbox<'a, M> {
    graph: &'a Graph,
    byzantine: &'a NodeSet,
    buffers: &'a mut PortBuffers<M>,
    seq: &'a mut [u64],
}

impl<M: Message> ByzantineOutbox<'_, M> {
    pub fn send(&mut self, from: NodeId, to: NodeId, msg: M) -> Result<()> {
        if !self.byzantine.contains(from) {
            return Err(SimError::NotByzantine(from));
        }
        let port = self.graph.port_of(from, to).ok_or(SimError::NotAnEdge { from, to })?;
        self.send_port(from, port, msg)
    }

    pub fn send_port(&mut self, from: NodeId, port: usize, mut msg: M) -> Result<()> {
        if !self.byzantine.contains(from) {
            return Err(SimError::NotByzantine(from));
        }
        let s = &mut self.seq[from as usize];
        msg.stamp_byzantine(from, *s);
        *s += 1;
        self.buffers.slots[from as usize * self.graph.d() + port].push(msg);
        Ok(())
    }

    pub fn staged(&self, from: NodeId, port: usize) -> usize {
        self.buffers.slot(from, port).len()
    }
}

pub trait Adversary<P: Protocol> {
    fn act(&mut self, view: &RoundView<'_, P>, out: &mut ByzantineOutbox<'_, P::Msg>) -> Result<()>;
}

/// Oracle-side hook with the same full view, called after honest updates
/// and before buffers are cleared.
pub trait Observer<P: Protocol> {
    fn after_round(&mut self, view: &RoundView<'_, P>);
}

impl<P: Protocol> Observer<P> for () {
    fn after_round(&mut self, _: &RoundView<'_, P>) {}
}

pub struct Engine<'a> {
    pub graph: &'a Graph,
    pub byzantine: &'a NodeSet,
    pub seed: u64,
    pub transcript: Transcript,
    round: u64,
    max_rounds: Option<u64>,
    byz_seq: Vec<u64>,
    honest: Vec<NodeId>,
}

impl<'a> Engine<'a> {
    pub fn new(graph: &'a Graph, byzantine: &'a NodeSet, seed: u64, transcript: Transcript) -> Self {
        Engine {
            graph,
            byzantine,
            seed,
            transcript,
            round: 0,
            max_rounds: None,
            byz_seq: vec![0; graph.n()],
            honest: byzantine.complement(),
        }
    }

    pub fn with_round_budget(mut self, max_rounds: Option<u64>) -> Self {
        self.max_rounds = max_rounds;
        self
    }

    /// Global round counter; keeps increasing across protocol instances.
    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn honest(&self) -> &[NodeId] {
        &self.honest
    }

    /// Advances the clock without traffic, for phases whose rounds are
    /// accounted analytically.
    pub fn skip_rounds(&mut self, k: u64) -> Result<()> {
        self.round += k;
        self.check_budget()
    }

    fn check_budget(&self) -> Result<()> {
        match self.max_rounds {
            Some(m) if self.round > m => Err(SimError::BudgetExhausted(m)),
            _ => Ok(()),
        }
    }

    pub fn run<P: Protocol>(
        &mut self,
        protocol: &P,
        nodes: &mut [P::Node],
        adversary: &mut dyn Adversary<P>,
        observer: &mut dyn Observer<P>,
    ) -> Result<()> {
        let g = self.graph;
        let n = g.n();
        let d = g.d();
        assert_eq!(nodes.len(), n, "one state per node");
        let mut buffers: PortBuffers<P::Msg> = PortBuffers::new(n, d);
        let mut rngs: Vec<Option<NodeRng>> = (0..n).map(|_| None).collect();
        let mut log = Vec::new();
        for local_round in 0..protocol.rounds() {
            let round = self.round;
            for &v in &self.honest {
                let mut rng = node_round(self.seed, v, round);
                let ctx = NodeCtx { id: v, neighbors: g.neighbors(v), local_round, round };
                let mut out = Outbox { slots: buffers.node_slots_mut(v) };
                protocol.stage(&ctx, &mut nodes[v as usize], &mut rng, &mut out);
                rngs[v as usize] = Some(rng);
            }

            {
                let view = RoundView {
                    round,
                    local_round,
                    graph: g,
                    byzantine: self.byzantine,
                    seed: self.seed,
                    protocol,
                    nodes,
                    staged: &buffers,
                };
                // The view borrows the buffers immutably; stage adversary
                // output separately and splice it in afterwards.
                let mut adv_buffers: PortBuffers<P::Msg> = PortBuffers::new(0, d);
                adv_buffers.slots = (0..n * d).map(|_| Vec::new()).collect();
                let mut out = ByzantineOutbox {
                    graph: g,
                    byzantine: self.byzantine,
                    buffers: &mut adv_buffers,
                    seq: &mut self.byz_seq,
                };
                adversary.act(&view, &mut out)?;
                for &b in self.byzantine.members() {
                    for p in 0..d {
                        let i = b as usize * d + p;
                        buffers.slots[i] = std::mem::take(&mut adv_buffers.slots[i]);
                    }
                }
            }

            self.record_round(round, &buffers);

            for &w in &self.honest {
                let ctx = NodeCtx { id: w, neighbors: g.neighbors(w), local_round, round };
                let inbox = Inbox { graph: g, node: w, buffers: &buffers };
                let rng = rngs[w as usize].as_mut().expect("staged this round");
                protocol.receive(&ctx, &mut nodes[w as usize], rng, &inbox, &mut log);
            }
            self.transcript.events.append(&mut log);

            let view = RoundView {
                round,
                local_round,
                graph: g,
                byzantine: self.byzantine,
                seed: self.seed,
                protocol,
                nodes,
                staged: &buffers,
            };
            observer.after_round(&view);
            buffers.clear();
            self.round += 1;
            self.check_budget()?;
        }
        Ok(())
    }

    fn record_round<M: Message>(&mut self, round: u64, buffers: &PortBuffers<M>) {
        let g = self.graph;
        let d = g.d();
        let (mut honest_msgs, mut byz_msgs, mut max_msgs, mut max_bits) = (0u64, 0u64, 0u64, 0u64);
        let full = self.transcript.full();
        for v in 0..g.n() as NodeId {
            let byz = self.byzantine.contains(v);
            for p in 0..d {
                let slot = buffers.slot(v, p);
                if byz {
                    byz_msgs += slot.len() as u64;
                } else {
                    honest_msgs += slot.len() as u64;
                    max_msgs = max_msgs.max(slot.len() as u64);
                    max_bits = max_bits.max(slot.iter().map(Message::wire_bits).sum());
                }
                if full {
                    let to = g.neighbor(v, p);
                    for m in slot {
                        self.transcript.push(Event::Traversal { round, from: v, to, id: m.trace_id() });
                    }
                }
            }
        }
        self.transcript.push(Event::Round {
            round,
            honest_msgs,
            byzantine_msgs: byz_msgs,
            max_edge_msgs: max_msgs,
            max_edge_bits: max_bits,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TranscriptLevel;
    use crate::graph::generate_regular_expander;
    use rand::Rng;

    /// Every honest node sends one fresh random bit to each neighbor and
    /// remembers what came back on each port.
    struct Echo;

    #[derive(Clone, Debug)]
    struct Bit(u8);

    impl Message for Bit {
        fn wire_bits(&self) -> u64 {
            1
        }
        fn trace_id(&self) -> u64 {
            self.0 as u64
        }
        fn stamp_byzantine(&mut self, _: NodeId, _: u64) {}
    }

    #[derive(Default)]
    struct EchoNode {
        sent: Vec<u8>,
        got: Vec<Vec<u8>>,
    }

    impl Protocol for Echo {
        type Msg = Bit;
        type Node = EchoNode;
        fn rounds(&self) -> u64 {
            3
        }
        fn stage(&self, ctx: &NodeCtx, node: &mut EchoNode, rng: &mut NodeRng, out: &mut Outbox<'_, Bit>) {
            let b: u8 = rng.gen_range(0..2);
            node.sent.push(b);
            for p in 0..ctx.neighbors.len() {
                out.push(p, Bit(b));
            }
        }
        fn receive(&self, ctx: &NodeCtx, node: &mut EchoNode, _: &mut NodeRng, inbox: &Inbox<'_, Bit>, _: &mut Vec<Event>) {
            let row = (0..ctx.neighbors.len()).map(|p| inbox.from_port(p).first().map_or(9, |b| b.0)).collect();
            node.got.push(row);
        }
    }

    /// Predicts each honest neighbor's bit from its stream and echoes it.
    struct Rusher;

    impl Adversary<Echo> for Rusher {
        fn act(&mut self, view: &RoundView<'_, Echo>, out: &mut ByzantineOutbox<'_, Bit>) -> Result<()> {
            for &b in view.byzantine.members() {
                for &w in view.graph.neighbors(b) {
                    let guess: u8 = view.node_rng(w).gen_range(0..2);
                    out.send(b, w, Bit(guess))?;
                }
            }
            Ok(())
        }
    }

    #[test]
    fn adversary_sees_same_round_randomness() {
        let g = generate_regular_expander(20, 4, 1).unwrap();
        let byz = NodeSet::new(20, [0, 5]);
        let mut e = Engine::new(&g, &byz, 42, Transcript::new(TranscriptLevel::Summary));
        let mut nodes: Vec<EchoNode> = (0..20).map(|_| EchoNode::default()).collect();
        e.run(&Echo, &mut nodes, &mut Rusher, &mut ()).unwrap();
        let mut checked = 0;
        for v in byz.complement() {
            for (p, &w) in g.neighbors(v).iter().enumerate() {
                if byz.contains(w) {
                    for r in 0..3 {
                        assert_eq!(nodes[v as usize].got[r][p], nodes[v as usize].sent[r]);
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked > 0);
        assert_eq!(e.round(), 3);
    }

    struct Impostor;

    impl Adversary<Echo> for Impostor {
        fn act(&mut self, _: &RoundView<'_, Echo>, out: &mut ByzantineOutbox<'_, Bit>) -> Result<()> {
            out.send(3, 4, Bit(1))
        }
    }

    #[test]
    fn honest_nodes_cannot_be_driven_and_budget_is_enforced() {
        let g = generate_regular_expander(20, 4, 1).unwrap();
        let byz = NodeSet::new(20, [0]);
        let mut nodes: Vec<EchoNode> = (0..20).map(|_| EchoNode::default()).collect();
        let mut e = Engine::new(&g, &byz, 1, Transcript::default());
        assert!(matches!(e.run(&Echo, &mut nodes, &mut Impostor, &mut ()), Err(SimError::NotByzantine(3))));
        let mut e = Engine::new(&g, &byz, 1, Transcript::default()).with_round_budget(Some(1));
        assert!(matches!(e.run(&Echo, &mut nodes, &mut Rusher, &mut ()), Err(SimError::BudgetExhausted(1))));
    }
}
