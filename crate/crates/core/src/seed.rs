//! Counter-based seed derivation.
//!
//! Every random stream in the crate is keyed by a base seed plus a path of
//! integers (task index, sweep-cell key, ...), so adding new consumers never
//! shifts the streams of existing ones.

/// One round of the SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Stable 64-bit FNV-1a hash, used to turn textual cell keys into path items.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

// Domain tags keep streams for different purposes apart.
pub const TAG_INIT: u64 = 1;
pub const TAG_MASK: u64 = 2;
pub const TAG_TRAIN: u64 = 3;
pub const TAG_HEADS: u64 = 4;
pub const TAG_JOINT: u64 = 5;
