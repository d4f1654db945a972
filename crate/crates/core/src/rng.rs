//! Seeding scheme. Every stochastic component draws from ChaCha20 seeded by
//! `derive_seed(master, tag, index)`, so results do not depend on thread
//! count or scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Identifier written into output metadata.
pub const RNG_ALGORITHM: &str = "chacha20;seed=splitmix64(master^fnv1a64(tag)+index)";

pub type DesignRng = ChaCha20Rng;

fn fnv1a64(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable child seed for replicate `index` of the stream named `tag`.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ fnv1a64(tag)).wrapping_add(index))
}

pub fn rng_for(master: u64, tag: &str, index: u64) -> DesignRng {
    ChaCha20Rng::seed_from_u64(derive_seed(master, tag, index))
}
