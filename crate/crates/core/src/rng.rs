//! Seed plumbing. Every stochastic component draws from a ChaCha stream whose
//! seed is derived from the run seed and a fixed tag path, so that results do
//! not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of tags into a new 64-bit seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn rng_from(base: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}

/// Tags used to separate independent random streams.
pub mod tag {
    pub const PATTERN: u64 = 1;
    pub const PHI_INIT: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const BATCH_NOISE: u64 = 4;
    pub const TEST_NOISE: u64 = 5;
    pub const SPSA: u64 = 6;
    pub const SPSA_BATCH: u64 = 7;
    pub const RELAXATION: u64 = 8;
    pub const SCENE: u64 = 9;
    pub const PERSON: u64 = 10;
    pub const MANN: u64 = 11;
    pub const CALIBRATION: u64 = 12;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_are_stable_and_tag_sensitive() {
        assert_eq!(derive_seed(7, &[1, 2]), derive_seed(7, &[1, 2]));
        assert_ne!(derive_seed(7, &[1, 2]), derive_seed(7, &[2, 1]));
        assert_ne!(derive_seed(7, &[1]), derive_seed(8, &[1]));
    }
}
