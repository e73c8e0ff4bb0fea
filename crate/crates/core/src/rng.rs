//! Seeded random substreams. Every random draw in a run derives from one seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Data = 1,
    Init = 2,
    Batching = 3,
    Divergence = 4,
}

/// Independent generator for `(seed, stream, salt)`.
pub fn stream_rng(seed: u64, stream: Stream, salt: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 32) | salt as u64);
    rng
}
