//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! keyed by a base seed plus a purpose-specific stream tag, so any stream can
//! be recreated from `(seed, tag, index)` without carrying generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const EPOCH_ORDER: u64 = 2;
    pub const NEGATIVES: u64 = 3;
    pub const SYNTH: u64 = 4;
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, tag: u64, index: u64) -> Rng {
    let a = mix(seed ^ mix(tag.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    let b = mix(a ^ mix(index.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(tag)));
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&a.to_le_bytes());
    key[8..16].copy_from_slice(&b.to_le_bytes());
    key[16..24].copy_from_slice(&mix(a ^ b).to_le_bytes());
    key[24..].copy_from_slice(&mix(b.wrapping_add(a)).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}
