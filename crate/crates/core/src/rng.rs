//! Counter-based random streams.
//!
//! Every consumer keys its stream on `(seed, key)` instead of drawing from a
//! shared generator, so results do not depend on evaluation order or on the
//! number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for stream `key` under `seed`.
pub fn stream(seed: u64, key: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(key);
    rng
}

/// Stream key for a 2D index, e.g. a LiDAR `(row, col)`.
#[inline]
pub fn key2(a: u64, b: u64) -> u64 {
    mix64(a.wrapping_mul(0x1000_0000_01B3) ^ mix64(b))
}
