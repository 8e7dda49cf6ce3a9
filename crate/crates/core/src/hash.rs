//! Stable 64-bit mixing used for label refinement and RNG keying.
//!
//! These values end up in split assignments and perturbation streams, so they
//! must not change between toolchains (unlike `std`'s hashers).

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub(crate) fn combine(h: u64, v: u64) -> u64 {
    splitmix64(h ^ splitmix64(v).rotate_left(17))
}

/// Folds a sequence of words into a single key.
pub(crate) fn key(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5EED_0F_6A7E_u64, |h, &p| combine(h, p))
}
