//! Seeded random number streams.
//!
//! Every stochastic routine takes an explicit `u64` seed. Independent
//! replicates and chains use [`stream`], which keeps the seed and selects a
//! distinct ChaCha stream per index, so results do not depend on thread
//! scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream `index` of the generator family rooted at `seed`.
pub fn stream(seed: u64, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_add(1));
    rng
}
