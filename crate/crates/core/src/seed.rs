//! Seed derivation helpers.
//!
//! Wherever we need a stream of independent RNGs that is a pure function of
//! (base seed, position), the position is folded into the seed with a
//! splitmix64 round per component. Reordering or skipping positions does not
//! change the RNG obtained at any other position.

/// One splitmix64 output step. Good avalanche behavior, cheap, stable.
pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives a child seed from a base seed and one index.
pub(crate) fn mix2(seed: u64, a: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ a)
}

/// Derives a child seed from a base seed and two indices.
pub(crate) fn mix3(seed: u64, a: u64, b: u64) -> u64 {
    mix2(mix2(seed, a), b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixes_are_position_sensitive() {
        assert_ne!(mix2(7, 0), mix2(7, 1));
        assert_ne!(mix2(7, 0), mix2(8, 0));
        assert_ne!(mix3(7, 1, 2), mix3(7, 2, 1));
    }

    #[test]
    fn mixes_are_stable() {
        // Pinned so serialized artifacts built from seeds stay reproducible
        // across refactors.
        assert_eq!(splitmix64(0), 0xe220a8397b1dcdaf);
        assert_eq!(mix2(42, 3), mix2(42, 3));
    }
}
