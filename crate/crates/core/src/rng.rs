//! Seeded random streams.
//!
//! Every stochastic routine takes an explicit `u64` seed. Independent parts of
//! a computation draw from distinct ChaCha streams of the same seed, so the
//! output does not depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Deterministic generator for `(seed, stream)`.
pub fn stream(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Packs a small multi-index into a stream id.
pub fn stream_id(parts: &[u64]) -> u64 {
    parts.iter().fold(0xcbf2_9ce4_8422_2325u64, |acc, &p| {
        (acc ^ p.wrapping_add(0x9e37_79b9_7f4a_7c15)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
