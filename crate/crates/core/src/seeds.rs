//! Deterministic seed derivation.
//!
//! Every source of randomness in the crate (init, shuffling, dropout,
//! masking) flows from explicit u64 seeds. Sub-seeds are derived with a
//! splitmix64 finalizer so that (seed, tag) pairs map to well-separated
//! streams and results never depend on evaluation order or thread schedule.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a sub-seed from a base seed and one tag.
pub fn mix(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ tag.wrapping_mul(GOLDEN))
}

/// Derive a sub-seed from a base seed and two tags.
pub fn mix2(seed: u64, a: u64, b: u64) -> u64 {
    mix(mix(seed, a), b)
}

/// FNV-1a hash of a name, used to give each named tensor its own init stream.
pub fn name_tag(name: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for byte in name.as_bytes() {
        h ^= u64::from(*byte);
        h = h.wrapping_mul(0x1000_0000_01B3);
    }
    h
}
