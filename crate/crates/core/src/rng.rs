//! Deterministic seed derivation.
//!
//! Everything random in the pipeline (parameter init, per-environment
//! episodes, minibatch shuffling, evaluation trials) draws from its own
//! named stream derived from the single master seed. Streams are
//! independent of each other and of iteration order, so adding a consumer
//! never perturbs existing ones and runs are bit-reproducible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One round of SplitMix64; a cheap, well-mixed 64-bit permutation.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Builder for a derived seed: fold in a purpose label and any number of
/// integer coordinates (env index, episode index, ...), then take an RNG.
#[derive(Debug, Clone, Copy)]
pub struct SeedStream {
    state: u64,
}

impl SeedStream {
    pub fn new(master: u64) -> Self {
        SeedStream {
            state: splitmix64(master),
        }
    }

    /// Fold an integer coordinate into the stream identity.
    pub fn with(self, word: u64) -> Self {
        SeedStream {
            state: splitmix64(self.state ^ splitmix64(word)),
        }
    }

    /// Fold a purpose label into the stream identity.
    pub fn with_str(self, label: &str) -> Self {
        let mut s = self;
        for chunk in label.as_bytes().chunks(8) {
            let mut w = [0u8; 8];
            w[..chunk.len()].copy_from_slice(chunk);
            s = s.with(u64::from_le_bytes(w));
        }
        s.with(label.len() as u64)
    }

    pub fn seed(self) -> u64 {
        self.state
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.state)
    }
}
