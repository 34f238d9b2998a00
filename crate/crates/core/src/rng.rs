//! Deterministic seed derivation.
//!
//! Every stage of a run derives its own sub-seed from the run seed and a
//! fixed stream label, so stages can execute in any order (or in parallel)
//! without perturbing each other's random draws.

/// Mix a base seed with a stream label into an independent sub-seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
