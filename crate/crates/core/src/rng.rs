//! Seeded random streams.
//!
//! Every random quantity derives from one experiment seed. Independent pieces of
//! work get their own ChaCha8 stream: the generator is seeded with the experiment
//! seed and `set_stream` selects `stream_base + task_index`. Results therefore do
//! not depend on how tasks are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ScudRng = ChaCha8Rng;

/// Stream bases used by the experiment driver.
pub mod streams {
    pub const DATA: u64 = 1 << 32;
    pub const INIT: u64 = 2 << 32;
    pub const TRAIN: u64 = 3 << 32;
    pub const ELBO: u64 = 4 << 32;
    pub const SAMPLE: u64 = 5 << 32;
    pub const DIAGNOSE: u64 = 6 << 32;
    pub const VERIFY: u64 = 7 << 32;
}

pub fn seeded(seed: u64) -> ScudRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// RNG for task `index` of the stream family starting at `base`.
pub fn stream_rng(seed: u64, base: u64, index: u64) -> ScudRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(base.wrapping_add(index));
    rng
}
