//! Ordered per-run event log, serialized as JSON lines or length-prefixed
//! binary records.

use crate::config::{TranscriptFormat, TranscriptLevel};
use crate::error::{Result, SimError};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Begin { label: String, round: u64 },
    Round { round: u64, honest_msgs: u64, byzantine_msgs: u64, max_edge_msgs: u64, max_edge_bits: u64 },
    Blacklist { round: u64, node: u32, neighbor: u32 },
    Traversal { round: u64, from: u32, to: u32, id: u64 },
    Decision { phase: u64, node: u32, value: u8 },
    Phase { phase: u64, agreement: f64, majority: u8, strong: u64, good_coin: Option<bool>, coin_bit: Option<u8> },
    CoinAudit { flip: u64, delivered: u64, forwarded: u64, nonconforming_forwards: u64, filtered: u64, discarded: u64 },
    Note { text: String },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Transcript {
    pub level: TranscriptLevel,
    pub events: Vec<Event>,
}

const TAG_JSON: u8 = 0;
const TAG_ROUND: u8 = 1;
const TAG_TRAVERSAL: u8 = 2;
const TAG_BLACKLIST: u8 = 3;

impl Transcript {
    pub fn new(level: TranscriptLevel) -> Self {
        Transcript { level, events: Vec::new() }
    }

    pub fn push(&mut self, e: Event) {
        self.events.push(e);
    }

    pub fn full(&self) -> bool {
        self.level == TranscriptLevel::Full
    }

    pub fn write<W: Write>(&self, format: TranscriptFormat, out: W) -> Result<()> {
        match format {
            TranscriptFormat::Jsonl => self.write_jsonl(out),
            TranscriptFormat::Binary => self.write_binary(out),
        }
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: Read>(input: R) -> Result<Vec<Event>> {
        let de = serde_json::Deserializer::from_reader(input).into_iter::<Event>();
        Ok(de.collect::<std::result::Result<_, _>>()?)
    }

    /// Each record is `u32 length, u8 tag, body`; hot events use fixed
    /// little-endian layouts, the rest carry a JSON body.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        let mut body = Vec::with_capacity(64);
        for e in &self.events {
            body.clear();
            match e {
                Event::Round { round, honest_msgs, byzantine_msgs, max_edge_msgs, max_edge_bits } => {
                    body.push(TAG_ROUND);
                    for x in [round, honest_msgs, byzantine_msgs, max_edge_msgs, max_edge_bits] {
                        body.extend_from_slice(&x.to_le_bytes());
                    }
                }
                Event::Traversal { round, from, to, id } => {
                    body.push(TAG_TRAVERSAL);
                    body.extend_from_slice(&round.to_le_bytes());
                    body.extend_from_slice(&from.to_le_bytes());
                    body.extend_from_slice(&to.to_le_bytes());
                    body.extend_from_slice(&id.to_le_bytes());
                }
                Event::Blacklist { round, node, neighbor } => {
                    body.push(TAG_BLACKLIST);
                    body.extend_from_slice(&round.to_le_bytes());
                    body.extend_from_slice(&node.to_le_bytes());
                    body.extend_from_slice(&neighbor.to_le_bytes());
                }
                other => {
                    body.push(TAG_JSON);
                    serde_json::to_writer(&mut body, other)?;
                }
            }
            out.write_all(&(body.len() as u32).to_le_bytes())?;
            out.write_all(&body)?;
        }
        Ok(())
    }

    pub fn read_binary(bytes: &[u8]) -> Result<Vec<Event>> {
        let mut events = Vec::new();
        let mut at = 0;
        let wire = |m: &str| SimError::Wire(m.to_string());
        while at < bytes.len() {
            let len_bytes = bytes.get(at..at + 4).ok_or_else(|| wire("truncated length"))?;
            let len = u32::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
            at += 4;
            let rec = bytes.get(at..at + len).ok_or_else(|| wire("truncated record"))?;
            at += len;
            let (&tag, body) = rec.split_first().ok_or_else(|| wire("empty record"))?;
            let mut r = LeReader { b: body };
            let e = match tag {
                TAG_ROUND => Event::Round {
                    round: r.u64()?,
                    honest_msgs: r.u64()?,
                    byzantine_msgs: r.u64()?,
                    max_edge_msgs: r.u64()?,
                    max_edge_bits: r.u64()?,
                },
                TAG_TRAVERSAL => Event::Traversal { round: r.u64()?, from: r.u32()?, to: r.u32()?, id: r.u64()? },
                TAG_BLACKLIST => Event::Blacklist { round: r.u64()?, node: r.u32()?, neighbor: r.u32()? },
                TAG_JSON => serde_json::from_slice(body)?,
                t => return Err(wire(&format!("unknown tag {t}"))),
            };
            events.push(e);
        }
        Ok(events)
    }

    /// SHA-256 of the JSON-lines encoding.
    pub fn digest(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        hex::encode(Sha256::digest(&buf))
    }
}

struct LeReader<'a> {
    b: &'a [u8],
}

impl LeReader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        if self.b.len() < N {
            return Err(SimError::Wire("short field".into()));
        }
        let (head, rest) = self.b.split_at(N);
        self.b = rest;
        Ok(head.try_into().unwrap())
    }

    fn u64(&mut self) -> Result<u64> {
        self.take::<8>().map(u64::from_le_bytes)
    }

    fn u32(&mut self) -> Result<u32> {
        self.take::<4>().map(u32::from_le_bytes)
    }
}
