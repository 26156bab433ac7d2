//! Deterministic seed derivation for replications and scales.
//!
//! Every random stream in the crate is a ChaCha8 generator whose seed is a
//! pure function of a base seed and a short list of stream coordinates
//! (replication index, scale index, purpose tag). The mixing function is
//! SplitMix64 applied coordinate by coordinate, so results never depend on
//! which worker thread runs which replication.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream tag for the noise path of a replication.
pub const TAG_NOISE: u64 = 0x6e6f_6973;
/// Stream tag for initial-point draws.
pub const TAG_START: u64 = 0x7374_6172;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `base` and the stream coordinates.
pub fn derive_seed(base: u64, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(splitmix64(base), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

/// Folds a textual label (e.g. an experiment kind) into a seed.
pub fn seed_with_label(base: u64, label: &str) -> u64 {
    // FNV-1a over the label bytes
    let h = label
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
    derive_seed(base, &[h])
}

pub fn rng_for(base: u64, coords: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(base, coords))
}
