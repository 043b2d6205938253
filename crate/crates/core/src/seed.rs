//! Deterministic seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator seeded through
//! [`derive_seed`], so independent streams (per sample, per epoch, per model
//! init) never alias even though they descend from one user-facing seed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keeping unrelated streams apart.
pub mod domain {
    pub const MODEL_INIT: u64 = 0x6d6f_6465;
    pub const HEAD_INIT: u64 = 0x6865_6164;
    pub const EPOCH_SHUFFLE: u64 = 0x7368_7566;
    pub const SAMPLE: u64 = 0x7361_6d70;
    pub const SPLIT: u64 = 0x7370_6c69;
    pub const CAPTURE_NOISE: u64 = 0x6e6f_6973;
}

/// Mixes a base seed with context words into a new 64-bit seed.
///
/// SplitMix64-style finalization; the same inputs always produce the same
/// output, and distinct input tuples are scattered across the output space.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut state = base ^ 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        state = state.wrapping_add(p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        state = splitmix(state);
    }
    splitmix(state)
}

fn splitmix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// ChaCha8 stream for the given base seed and context.
pub fn rng_for(base: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derivation_is_deterministic() {
        assert_eq!(derive_seed(7, &[1, 2]), derive_seed(7, &[1, 2]));
        assert_ne!(derive_seed(7, &[1, 2]), derive_seed(7, &[2, 1]));
        assert_ne!(derive_seed(7, &[1]), derive_seed(8, &[1]));
    }

    #[test]
    fn streams_do_not_alias() {
        let a: u64 = rng_for(3, &[domain::SAMPLE, 0]).gen();
        let b: u64 = rng_for(3, &[domain::SAMPLE, 1]).gen();
        let c: u64 = rng_for(3, &[domain::EPOCH_SHUFFLE, 0]).gen();
        assert_ne!(a, b);
        assert_ne!(a, c);
    }
}
