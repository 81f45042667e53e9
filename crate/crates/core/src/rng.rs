//! Seeded random streams.
//!
//! Every random draw in the crate comes from a `ChaCha8Rng` built here, so
//! runs are reproducible from a single `u64` seed. Parallel work derives an
//! independent stream per task from the master seed and the task index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream `index` of the generator seeded with `seed`.
pub fn stream(seed: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_add(1));
    rng
}
