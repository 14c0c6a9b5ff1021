//! Splittable, counter-based random streams.
//!
//! Every consumer derives its generator from a master seed plus a `(label,
//! index)` pair, so results never depend on call order or scheduling.
//! Sub-seeds are SHA-256 digests of the parent seed and the stream name;
//! the generator is ChaCha12, and Gaussians come from `rand_distr`'s
//! ziggurat `StandardNormal`, fixed per release for bitwise determinism.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// A node in the seed-derivation tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    master: u64,
}

impl SeedStream {
    pub fn new(master: u64) -> Self {
        SeedStream { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    fn digest(&self, label: &str, index: u64) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.master.to_le_bytes());
        h.update([0x1f]); // domain separator: master | label | index
        h.update(label.as_bytes());
        h.update([0x1f]);
        h.update(index.to_le_bytes());
        h.finalize().into()
    }

    /// Generator for the named stream. Identical `(master, label, index)`
    /// always yields the identical sequence.
    pub fn rng(&self, label: &str, index: u64) -> ChaCha12Rng {
        ChaCha12Rng::from_seed(self.digest(label, index))
    }

    /// Child stream, for nesting (e.g. per-replicate sub-trees).
    pub fn substream(&self, label: &str, index: u64) -> SeedStream {
        let d = self.digest(label, index);
        SeedStream {
            master: u64::from_le_bytes(d[..8].try_into().unwrap()),
        }
    }
}
