//! Seeded stream splitting.
//!
//! Every Monte Carlo unit (sample, cell, draw) gets its own ChaCha8 stream
//! keyed by `(seed, domain, index)`, so results do not depend on how work is
//! scheduled across threads.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng as Rng;

/// Stream for work unit `index` of experiment stage `domain`.
pub fn stream(seed: u64, domain: u16, index: u64) -> Rng {
    let mut r = Rng::seed_from_u64(seed);
    r.set_stream(((domain as u64) << 48) ^ index);
    r
}
