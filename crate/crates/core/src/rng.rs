//! Seeded randomness.
//!
//! Every stochastic step draws from [`StageRng`], a PCG-family 128-bit
//! multiplicative congruential generator (`Pcg64Mcg`: state `s <- s * M mod 2^128`,
//! output an xorshift-low/rotate permutation of the high bits). It is seeded by
//! expanding a `u64` through SplitMix64, so the stream is a pure function of the
//! seed on every platform.
//!
//! Child seeds (per restart, per image, per cluster) are derived with
//! [`derive_seed`], a SplitMix64 finalizer over `(parent, stream)`.

use rand::SeedableRng;

pub type StageRng = rand_pcg::Pcg64Mcg;

pub fn stage_rng(seed: u64) -> StageRng {
    StageRng::seed_from_u64(seed)
}

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the `stream`-th child of `parent`.
pub fn derive_seed(parent: u64, stream: u64) -> u64 {
    mix64(mix64(parent) ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
}
