//! Counter-based random streams.
//!
//! A [`RngStream`] is addressed by a root seed and a path of integer labels
//! (candidate, round, particle, step, ...). The generator for a stream is a
//! ChaCha8 keyed by a hash of the full address, so the numbers drawn from a
//! stream depend only on its address and never on how many other streams
//! were used before it or on which thread evaluates it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    root_seed: u64,
    path: Vec<u64>,
    key: u64,
}

impl RngStream {
    pub fn new(root_seed: u64) -> Self {
        Self {
            root_seed,
            path: Vec::new(),
            key: mix64(root_seed ^ 0x243F_6A88_85A3_08D3),
        }
    }

    /// Rebuild a stream from a stored `(root, path)` address.
    pub fn from_path(root_seed: u64, path: &[u64]) -> Self {
        path.iter()
            .fold(Self::new(root_seed), |s, &label| s.child(label))
    }

    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    pub fn path(&self) -> &[u64] {
        &self.path
    }

    /// Derive the sub-stream with one more path label. The parent is untouched.
    pub fn child(&self, label: u64) -> Self {
        let mut path = Vec::with_capacity(self.path.len() + 1);
        path.extend_from_slice(&self.path);
        path.push(label);
        Self {
            root_seed: self.root_seed,
            path,
            key: mix64(self.key ^ mix64(label.wrapping_add(0x9E37_79B9_7F4A_7C15))),
        }
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn generator(&self) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        let mut state = self.key;
        for chunk in seed.chunks_exact_mut(8) {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            chunk.copy_from_slice(&mix64(state).to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }

    /// The first `d` standard normal variates of this stream.
    pub fn standard_normal(&self, d: usize) -> Vec<f64> {
        let mut rng = self.generator();
        (0..d).map(|_| StandardNormal.sample(&mut rng)).collect()
    }
}

// splitmix64 finalizer
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
