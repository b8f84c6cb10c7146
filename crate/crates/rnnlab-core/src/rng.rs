//! Seed plumbing. Every random decision in the crate flows through a
//! [`ChaCha8Rng`] created here, so a run is a pure function of its seeds.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic RNG for a given 64-bit seed.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream seed from a root seed and a stream index.
///
/// splitmix64 finalizer; consecutive indices give uncorrelated seeds, so
/// per-sequence and per-epoch streams never overlap even when the root seeds
/// are small integers like 0 and 1.
pub fn derive_stream(root: u64, stream: u64) -> u64 {
    let mut z = root
        .wrapping_add(0x9e3779b97f4a7c15)
        .wrapping_add(stream.wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
