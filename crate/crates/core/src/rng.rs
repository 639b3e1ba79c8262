//! Seed plumbing. Every random stream in the crate is a ChaCha8 generator
//! whose seed is derived from a user seed plus a textual stream label, so
//! independent components never share or perturb each other's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// FNV-1a, 64 bit. Stable across platforms and toolchains.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: &str) -> u64 {
    splitmix(seed ^ fnv1a(stream.as_bytes()))
}

pub fn derive_seed2(seed: u64, stream: &str, index: u64) -> u64 {
    splitmix(derive_seed(seed, stream) ^ splitmix(index))
}

pub fn rng(seed: u64, stream: &str) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, stream))
}

pub fn rng_indexed(seed: u64, stream: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed2(seed, stream, index))
}
