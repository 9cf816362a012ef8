//! Seeded generator plumbing.
//!
//! Every stochastic routine takes an explicit generator. The pinned generator is
//! ChaCha8 (counter based, 2^64 independent streams per key), so golden values
//! in the test suite stay valid across platforms.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng as SimRng;

/// SplitMix64 finaliser, used to derive well-separated per-cell seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn seeded(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Independent substream `stream` of the generator keyed by `seed`.
pub fn substream(seed: u64, stream: u64) -> SimRng {
    let mut r = SimRng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}
