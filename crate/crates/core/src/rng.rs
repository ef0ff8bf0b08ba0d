//! Keyed random streams.
//!
//! Every random choice in a run comes from a ChaCha8 stream whose seed is a
//! hash of `(master seed, purpose, a, b)`. Honest node `v` in global round `r`
//! draws from `stream(seed, Purpose::Node, v, r)`, so the adversary can
//! rebuild any honest stream it likes and replays are exact.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type NodeRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Graph = 1,
    Byzantine = 2,
    Node = 3,
    Rank = 4,
    CoinBit = 5,
    Adversary = 6,
    Input = 7,
    Payload = 8,
}

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit keyed digest of the tuple.
pub fn key(seed: u64, purpose: Purpose, a: u64, b: u64) -> u64 {
    let h = splitmix(seed ^ splitmix(purpose as u64));
    let h = splitmix(h ^ splitmix(a.wrapping_add(0x5851_F42D_4C95_7F2D)));
    splitmix(h ^ splitmix(b.wrapping_add(0x1405_7B7E_F767_814F)))
}

pub fn stream(seed: u64, purpose: Purpose, a: u64, b: u64) -> NodeRng {
    let mut bytes = [0u8; 32];
    let mut k = key(seed, purpose, a, b);
    for chunk in bytes.chunks_exact_mut(8) {
        k = splitmix(k);
        chunk.copy_from_slice(&k.to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

/// Stream honest node `node` uses in global round `round`.
pub fn node_round(seed: u64, node: u32, round: u64) -> NodeRng {
    stream(seed, Purpose::Node, node as u64, round)
}
