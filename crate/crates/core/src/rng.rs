//! Reproducible random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator. Independent
//! jobs (EM restarts, permutation replicates, simulation replicates) get their
//! own stream so results never depend on scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator for stream `stream` of master seed `seed`.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer; used to fold coordinates into a seed.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based seed for the coordinates `parts` under a master seed.
///
/// Distinct coordinate tuples give unrelated seeds, so any subset of a grid
/// can be recomputed on its own.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(mix(master), |acc, &p| mix(acc ^ mix(p.wrapping_add(0x5851_F42D_4C95_7F2D))))
}
