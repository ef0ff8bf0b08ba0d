use crate::engine::Message;
use crate::error::{Result, SimError};
use crate::graph::NodeId;
use serde::{Deserialize, Serialize};

/// Identity of a token as honest nodes see it.
///
/// `counter` is a per-source sequence number for single-stage walks; for
/// staged walks it packs `(duplicating node, local index)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenKey {
    pub source: NodeId,
    pub rank: u32,
    pub counter: u64,
    pub stage: u16,
}

impl TokenKey {
    pub fn staged_counter(node: NodeId, index: u32) -> u64 {
        ((node as u64) << 32) | index as u64
    }
}

pub const NO_INSTANCE: u64 = u64::MAX;

/// Oracle-only bookkeeping carried along with a token. Honest code copies it
/// but never branches on it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shadow {
    /// `(creator << 32) | creator-local sequence number`.
    pub instance: u64,
    pub parent: u64,
}

impl Shadow {
    pub fn new(creator: NodeId, seq: u32, parent: u64) -> Shadow {
        Shadow { instance: instance_id(creator, seq), parent }
    }
}

#[inline]
pub fn instance_id(creator: NodeId, seq: u32) -> u64 {
    ((creator as u64) << 32) | seq as u64
}

#[inline]
pub fn instance_creator(id: u64) -> NodeId {
    (id >> 32) as NodeId
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Token {
    pub key: TokenKey,
    /// Hops taken so far in the current stage.
    pub step: u16,
    pub payload: u64,
    pub shadow: Shadow,
}

/// Bytes in the fixed wire layout.
pub const WIRE_LEN: usize = 32;

impl Token {
    pub fn new(key: TokenKey, payload: u64, shadow: Shadow) -> Token {
        Token { key, step: 0, payload, shadow }
    }

    /// `source u32, rank u32, counter u64, stage u16, step u16, len u32,
    /// payload u64`, little endian.
    pub fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.key.source.to_le_bytes());
        out.extend_from_slice(&self.key.rank.to_le_bytes());
        out.extend_from_slice(&self.key.counter.to_le_bytes());
        out.extend_from_slice(&self.key.stage.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&8u32.to_le_bytes());
        out.extend_from_slice(&self.payload.to_le_bytes());
    }

    /// Inverse of [`Token::encode`]; the shadow is not on the wire.
    pub fn decode(bytes: &[u8]) -> Result<Token> {
        if bytes.len() != WIRE_LEN {
            return Err(SimError::Wire(format!("token record has {} bytes", bytes.len())));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let u16_at = |i: usize| u16::from_le_bytes(bytes[i..i + 2].try_into().unwrap());
        let u64_at = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
        if u32_at(20) != 8 {
            return Err(SimError::Wire(format!("unsupported payload length {}", u32_at(20))));
        }
        Ok(Token {
            key: TokenKey { source: u32_at(0), rank: u32_at(4), counter: u64_at(8), stage: u16_at(16) },
            step: u16_at(18),
            payload: u64_at(24),
            shadow: Shadow { instance: NO_INSTANCE, parent: NO_INSTANCE },
        })
    }
}

impl Message for Token {
    fn wire_bits(&self) -> u64 {
        WIRE_LEN as u64 * 8
    }

    fn trace_id(&self) -> u64 {
        self.shadow.instance
    }

    fn stamp_byzantine(&mut self, from: NodeId, seq: u64) {
        self.shadow = Shadow { instance: instance_id(from, seq as u32), parent: NO_INSTANCE };
    }
}
