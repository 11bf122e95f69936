//! Seeding helpers. Every stochastic routine takes an explicit RNG; these
//! helpers derive independent child streams from a root seed so that
//! parallel work stays reproducible regardless of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a root seed with a path of stream identifiers.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(root), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn child(root: u64, path: &[u64]) -> Rng {
    seeded(derive_seed(root, path))
}
