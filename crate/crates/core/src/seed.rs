//! Seed splitting for reproducible, independent random streams.
//!
//! A command-level seed is mapped to a per-component stream with
//! `derive_seed(root, component, index)`: the component name is hashed with
//! 64-bit FNV-1a and the result, the root seed and the stream index are
//! combined through SplitMix64 finalizers. The rule depends only on its
//! arguments, so streams are stable across platforms and thread counts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(name: &str) -> u64 {
    name.bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(root: u64, component: &str, index: u64) -> u64 {
    let stream = splitmix64(root ^ splitmix64(fnv1a(component)));
    splitmix64(stream ^ splitmix64(index.wrapping_add(1)))
}

pub fn stream(root: u64, component: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, component, index))
}
