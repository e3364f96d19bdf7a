//! Seeded random streams.
//!
//! Every stochastic routine takes an explicit `&mut impl Rng`. Runs that fan
//! out over independent workers derive one stream per worker from the master
//! seed: the generator is `ChaCha8Rng::seed_from_u64(master)` with its stream
//! id set to the worker index. Streams never overlap, so results depend only on
//! `(master, worker)` and not on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

/// Generator for a master seed.
pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` derived from `seed`.
pub fn split(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
