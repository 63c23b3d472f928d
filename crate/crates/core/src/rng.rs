//! Seed derivation and the deterministic generator used everywhere.
//!
//! All randomness flows from 64-bit seeds through [`mix64`], the SplitMix64
//! finalizer. It is a bijection on `u64`, so distinct inputs always map to
//! distinct outputs, and it is platform independent.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator type used for every random draw in the crate.
pub type Rng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn mix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the sketch operator used at `round`.
///
/// For a fixed master seed the map `round -> seed` is injective.
pub fn derive_round_seed(master_seed: u64, round: u64) -> u64 {
    mix64(master_seed ^ mix64(round))
}

/// Seed of an independent stream identified by a domain tag and an index.
///
/// Domain tags keep streams that share a master seed (sketches, data
/// generation, batch sampling, noise) apart from each other.
pub fn derive_stream(master_seed: u64, domain: u64, index: u64) -> u64 {
    mix64(mix64(master_seed ^ mix64(domain.wrapping_mul(GOLDEN))) ^ index)
}

/// Deterministic generator from a seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream domain tags.
pub mod domain {
    pub const DATA: u64 = 1;
    pub const SEED: u64 = 2;
    pub const BATCH: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const BATTERY: u64 = 5;
    pub const SAMPLER: u64 = 6;
    pub const ATTACK: u64 = 7;
}
