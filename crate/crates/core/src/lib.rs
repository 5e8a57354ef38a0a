//! Differentially private range-count queries over 2D point data.
//!
//! The pipeline sanitizes a dataset exactly once: the region is cut into an
//! equi-width grid, each cell count is released with Laplace noise
//! ([`dp::collect`]), the noisy grid is expanded into training sets at several
//! query sizes ([`augment`]), and one small fully-connected network per size
//! is trained on the noisy labels ([`mlp`], [`model`]). The trained bank
//! answers an unbounded number of range-count queries without touching the
//! data again. [`paramselect`] picks the grid width from public data;
//! [`baselines`] and [`eval`] provide a uniform-grid comparison point and a
//! seeded evaluation harness.

pub mod augment;
pub mod baselines;
pub mod dp;
pub mod eval;
pub mod geo;
pub mod mlp;
pub mod model;
pub mod paramselect;

/// Derives a child seed from a root seed and a labeled stream index.
///
/// All randomness in the crate fans out from one root seed through this
/// function, so a run is reproducible from its config alone.
pub fn derive_seed(root: u64, label: &str, index: u64) -> u64 {
    // FNV-1a over the label, then a splitmix64 finalizer.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    let mut z = root
        .wrapping_add(h)
        .wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
