//! Deterministic random substreams.
//!
//! All randomness in an experiment flows from one master seed. Each consumer
//! (scenario draw, truth propagation, sensor noise, policy, clustering) gets
//! its own ChaCha stream keyed by `(master, run, epoch, tag)` so that changing
//! how much one consumer draws never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream tags.
pub mod tag {
    pub const SCENARIO: u64 = 1;
    pub const TRUTH: u64 = 2;
    pub const SENSING: u64 = 3;
    pub const POLICY: u64 = 4;
    pub const CLUSTERING: u64 = 5;
    pub const TUNE_DEMO: u64 = 6;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a path of integers into a child seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(master: u64, path: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, path))
}
