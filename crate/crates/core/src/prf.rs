//! Keyed pseudo-random function used for vocabulary partitions, bias signs,
//! and the EXP key sequence.
//!
//! The mixer is the splitmix64 finalizer. It is part of the reproducibility
//! contract: partitions and key sequences must be identical across builds, so
//! the exact constants below are frozen.

const PHI: u64 = 0x9e37_79b9_7f4a_7c15;

/// splitmix64 finalizer (Vigna). Fixed for reproducibility.
#[inline]
pub fn mix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(PHI);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
pub fn mix2(a: u64, b: u64) -> u64 {
    mix64(a.wrapping_add(mix64(b)))
}

#[inline]
pub fn mix3(a: u64, b: u64, c: u64) -> u64 {
    mix64(a.wrapping_add(mix64(b.wrapping_add(mix64(c)))))
}

/// Order-sensitive hash of a token id window.
pub fn hash_ids(ids: &[u32]) -> u64 {
    let mut h = 0x6a09_e667_f3bc_c909u64;
    for &id in ids {
        h = mix2(h, id as u64);
    }
    h
}

/// Map a mixed word into the open interval (0, 1) with 53-bit resolution.
#[inline]
pub fn unit_open(x: u64) -> f64 {
    ((x >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}
