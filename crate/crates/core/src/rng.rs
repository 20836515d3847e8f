//! Named, splittable random streams.
//!
//! Every stochastic draw in a run comes from a [`RngStream`] derived from the
//! run seed and a path of labels (`"world-init"`, `"estimator"` + agent index,
//! ...). Deriving a child never advances the parent, so the draws a stream
//! produces depend only on its path, never on which other streams were used
//! or in what order. The generator behind each stream is ChaCha8, a
//! counter-based cipher keyed by the derived 256-bit key.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Well-known stream labels used by the simulators and the harness.
pub mod label {
    pub const WORLD_INIT: &str = "world-init";
    pub const ESTIMATOR: &str = "estimator";
    pub const COMPRESSOR: &str = "compressor";
    pub const NEIGHBOR_DROPOUT: &str = "neighbor-dropout";
    pub const NOISE: &str = "noise";
}

#[derive(Clone, Debug)]
pub struct RngStream {
    key: [u64; 4],
    inner: ChaCha8Rng,
}

impl RngStream {
    /// Root stream for a seed.
    pub fn from_seed(seed: u64) -> Self {
        let mut state = seed ^ 0x6A09_E667_F3BC_C909;
        let key = [
            splitmix64(&mut state),
            splitmix64(&mut state),
            splitmix64(&mut state),
            splitmix64(&mut state),
        ];
        Self::from_key(key)
    }

    fn from_key(key: [u64; 4]) -> Self {
        let mut bytes = [0u8; 32];
        for (chunk, word) in bytes.chunks_exact_mut(8).zip(key) {
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        Self {
            key,
            inner: ChaCha8Rng::from_seed(bytes),
        }
    }

    /// Child stream identified by a textual label.
    pub fn derive(&self, label: &str) -> Self {
        self.derive_word(fnv1a64(label.as_bytes()))
    }

    /// Child stream identified by an index (agent number, run number, ...).
    pub fn derive_index(&self, index: u64) -> Self {
        self.derive_word(index.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xD6E8_FEB8_6659_FD93)
    }

    fn derive_word(&self, word: u64) -> Self {
        let mut key = [0u64; 4];
        let mut state = word;
        for (slot, parent) in key.iter_mut().zip(self.key) {
            state ^= parent;
            *slot = splitmix64(&mut state);
        }
        Self::from_key(key)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform draw in `[lo, hi]`; returns `lo` when the interval is degenerate.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.normal();
        }
    }

    pub fn normal_vec(&mut self, dim: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        self.fill_normal(&mut v);
        v
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}
