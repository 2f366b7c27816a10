//! Deterministic, splittable seeding.
//!
//! Every Monte Carlo loop in the crate derives one generator per task from a
//! parent seed and a task index, never from a shared generator. The result of
//! a parallel loop is therefore a function of the root seed alone and does not
//! depend on how many worker threads rayon happens to use.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Generator used for all simulation streams.
pub type SimRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// The splitmix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A node in a tree of seeds. Children are addressed by a string label
/// (purpose) or an integer counter (task index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedTree(u64);

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        SeedTree(mix64(seed.wrapping_add(GOLDEN)))
    }

    /// Draws a fresh root from an existing generator.
    pub fn from_rng<R: Rng + ?Sized>(rng: &mut R) -> Self {
        SeedTree(mix64(rng.next_u64()))
    }

    pub fn label(self, label: &str) -> Self {
        let mut h = self.0;
        for &b in label.as_bytes() {
            h = mix64(h ^ u64::from(b)).wrapping_add(GOLDEN);
        }
        SeedTree(mix64(h ^ label.len() as u64))
    }

    pub fn index(self, i: u64) -> Self {
        SeedTree(mix64(self.0 ^ mix64(i.wrapping_add(1).wrapping_mul(GOLDEN))))
    }

    pub fn value(self) -> u64 {
        self.0
    }

    pub fn rng(self) -> SimRng {
        SimRng::seed_from_u64(self.0)
    }
}

/// Generator for a labeled purpose under a root seed.
pub fn stream(seed: u64, label: &str) -> SimRng {
    SeedTree::new(seed).label(label).rng()
}
