//! Stable seed derivation. Independent of std's hasher so seeds survive
//! toolchain upgrades and checkpoints stay valid.

/// One round of SplitMix64.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xCBF2_9CE4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

pub fn derive(root: u64, tag: u64) -> u64 {
    splitmix64(root ^ splitmix64(tag))
}

pub fn derive_str(root: u64, tag: &str) -> u64 {
    derive(root, fnv1a(tag.as_bytes()))
}
