//! Keyed random streams.
//!
//! Every consumer of randomness asks for a `(seed, stream)` pair; ChaCha is a
//! counter-based generator so independent streams can be drawn in any order
//! (or concurrently) without changing the numbers each stream produces.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream id for the Poisson point count and positions.
pub const STREAM_POINTS: u64 = 1;
/// Stream id for the radius marks.
pub const STREAM_MARKS: u64 = 2;

pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer; used to derive sub-seeds from `(seed, id)` pairs.
pub fn mix(seed: u64, id: u64) -> u64 {
    let mut z = seed ^ id.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
