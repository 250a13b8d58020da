//! Seed derivation.
//!
//! A master seed fans out to sub-seeds by folding each tag word through
//! SplitMix64: `s ← splitmix64(s ⊕ splitmix64(tag))`. Stages use fixed tags,
//! so re-running one stage with the same master seed reproduces its draws.

/// One SplitMix64 output for state `x`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix64(seed), |s, &t| splitmix64(s ^ splitmix64(t)))
}

/// Tags for the pipeline stages.
pub mod stage {
    pub const TOPOLOGY: u64 = 1;
    pub const SHADOWING: u64 = 2;
    pub const ORACLE: u64 = 3;
}
