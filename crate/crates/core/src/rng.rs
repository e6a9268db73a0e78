//! Seed derivation.
//!
//! Every random stream is a ChaCha8 generator keyed by a 64-bit seed obtained
//! from the top-level seed through [`derive_seed`]: a SplitMix64 finalizer
//! applied to `seed`, then to a stream tag, then to a task index. Streams are
//! therefore a pure function of `(seed, tag, index)` and never depend on which
//! worker thread runs a task.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream tags keep unrelated consumers of the same seed apart.
pub mod tag {
    pub const PHI_MC: u64 = 1;
    pub const CASCADE: u64 = 2;
    pub const FIELDS: u64 = 3;
    pub const DISORDER: u64 = 4;
    pub const PERTURBATION: u64 = 5;
    pub const OPTIMIZER: u64 = 6;
    pub const REPLICATION: u64 = 7;
    pub const UNIFORM_U: u64 = 8;
    pub const CONFIGS: u64 = 9;
}

pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ tag.wrapping_mul(GOLDEN)) ^ index)
}

pub fn stream(seed: u64, tag: u64, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, tag, index))
}
