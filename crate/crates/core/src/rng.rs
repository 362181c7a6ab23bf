//! Seeded random streams.
//!
//! Every stochastic routine takes a `u64` seed and derives a ChaCha8 stream
//! from it, so results are reproducible across platforms and crate versions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags keep the streams drawn from one seed independent.
pub(crate) mod stream {
    pub const PRIOR: u64 = 1;
    pub const MUTATE: u64 = 2;
    pub const POOL: u64 = 3;
    pub const HYPERS: u64 = 4;
    pub const KERNEL_MEAN: u64 = 5;
    pub const KERNEL_MEAN_PAIRS: u64 = 6;
    pub const TOURNAMENT: u64 = 7;
    pub const SYNTH_ANCHORS: u64 = 8;
    pub const SYNTH_LABELS: u64 = 9;
    pub const SYNTH_ARCH: u64 = 10;
    pub const RANDOM_SEARCH: u64 = 11;
}

pub(crate) fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes two words into a fresh seed (splitmix64 finalizer).
pub(crate) fn mix(a: u64, b: u64) -> u64 {
    let mut z = a
        .wrapping_add(b.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
