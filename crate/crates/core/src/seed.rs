//! Seed derivation.
//!
//! Every random stream in a run is keyed by `derive(master, tags...)` so that a
//! client's draws depend only on its identity and round, never on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keep unrelated generators apart even for equal (client, round).
pub mod stream {
    pub const SHUFFLE: u64 = 1;
    pub const AVAILABILITY: u64 = 2;
    pub const DP_NOISE: u64 = 3;
    pub const DROPOUT: u64 = 4;
    pub const PAILLIER: u64 = 5;
    pub const PARTITION: u64 = 6;
    pub const INIT: u64 = 7;
    pub const DATA: u64 = 8;
    pub const SPLIT: u64 = 9;
    pub const KEYGEN: u64 = 10;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with an ordered list of tags into a new 64-bit seed.
pub fn derive(master: u64, tags: &[u64]) -> u64 {
    let mut h = splitmix64(master);
    for &t in tags {
        h = splitmix64(h ^ splitmix64(t.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(master: u64, tags: &[u64]) -> ChaCha8Rng {
    rng(derive(master, tags))
}
