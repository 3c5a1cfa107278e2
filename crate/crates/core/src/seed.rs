//! Seed derivation for per-client and per-purpose random streams.
//!
//! A derived seed is `splitmix64(seed ^ index)`, where `splitmix64` is the
//! finalizer of Steele, Lea and Flood's SplitMix64 generator. All streams are
//! ChaCha8 seeded with the derived value.

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for stream `index` derived from a master seed.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ index)
}

/// Stream indices reserved for non-client purposes, far from client ids.
pub(crate) const BATCH_STREAM: u64 = 1 << 63;
pub(crate) const RECOVERY_STREAM: u64 = (1 << 63) | 1;
pub(crate) const CANDIDATE_STREAM: u64 = (1 << 63) | 2;
pub(crate) const BASELINE_STREAM: u64 = (1 << 63) | 4;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_values() {
        // First outputs of SplitMix64 seeded with 0: state advances by the
        // golden gamma before mixing.
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_ne!(mix_seed(42, 0), mix_seed(42, 1));
        assert_eq!(mix_seed(42, 3), mix_seed(42, 3));
    }
}
