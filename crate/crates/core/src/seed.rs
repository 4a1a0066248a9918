//! Deterministic child-seed derivation.
//!
//! Every random stream in the pipeline (identities, takes, batches,
//! weight init) is keyed by a path of integers under one master seed, so
//! output never depends on evaluation order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `path` into `master`; distinct paths give unrelated seeds.
pub fn derive(master: u64, path: &[u64]) -> u64 {
    let mut h = splitmix64(master);
    for &p in path {
        h = splitmix64(h ^ splitmix64(p.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

pub fn rng(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, path))
}

/// Domain tags that keep the streams of different subsystems apart.
pub mod tag {
    pub const IDENTITY: u64 = 1;
    pub const PHRASE: u64 = 2;
    pub const EMOTION: u64 = 3;
    pub const TAKE: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const INIT: u64 = 6;
    pub const BATCH: u64 = 7;
    pub const EVAL: u64 = 8;
}
