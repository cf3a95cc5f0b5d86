//! Deterministic seed fan-out.
//!
//! One master seed is expanded into independent stream seeds by hashing a
//! stream tag through SplitMix64, so every random component of a run can be
//! reproduced from a single integer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `master` and a stream tag.
pub fn derive(master: u64, tag: &str) -> u64 {
    tag.bytes()
        .fold(splitmix64(master), |acc, b| splitmix64(acc ^ u64::from(b)))
}

/// Derive a child seed for an indexed stream (trial number, MC draw, ...).
pub fn derive_indexed(master: u64, tag: &str, index: u64) -> u64 {
    splitmix64(derive(master, tag) ^ splitmix64(index))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// The fixed set of per-run streams the CLI fans a master seed into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RunSeeds {
    pub split: u64,
    pub init: u64,
    pub attack: u64,
    pub monte_carlo: u64,
}

impl RunSeeds {
    pub fn from_master(master: u64) -> Self {
        Self {
            split: derive(master, "split"),
            init: derive(master, "init"),
            attack: derive(master, "attack"),
            monte_carlo: derive(master, "monte-carlo"),
        }
    }
}
