//! Aspect extraction from vulnerability descriptions and missing-aspect prediction.

pub mod corpus;
pub mod dataset;
pub mod embed;
pub mod eval;
pub mod exp;
pub mod extract;
pub mod nn;
pub mod synth;

/// 64-bit FNV-1a. Stable across platforms and releases.
pub fn fnv64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// [`fnv64`] as 16 hex digits.
pub fn fingerprint(bytes: &[u8]) -> String {
    format!("{:016x}", fnv64(bytes))
}
