//! Seeded random streams.
//!
//! Every stochastic choice in the crate draws from its own SplitMix64 stream
//! keyed by `(seed, tag)` and optionally an index, so that changing how one
//! component consumes randomness never shifts another component's draws.

use rand::SeedableRng;
pub use rand_xoshiro::SplitMix64;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream for `(seed, tag)`.
pub fn stream(seed: u64, tag: &str) -> SplitMix64 {
    SplitMix64::seed_from_u64(mix(seed ^ fnv1a(tag.as_bytes())))
}

/// Stream for `(seed, tag, index)`, e.g. one per class or per image.
pub fn indexed_stream(seed: u64, tag: &str, index: u64) -> SplitMix64 {
    SplitMix64::seed_from_u64(mix(mix(seed ^ fnv1a(tag.as_bytes())) ^ index))
}
