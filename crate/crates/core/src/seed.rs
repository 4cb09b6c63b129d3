//! Seed derivation.
//!
//! Every random draw in the engine comes from a ChaCha stream derived from one
//! master seed and a stream name, so components can be re-seeded independently.
//! Per-query noise (benchmark replicas, batch observations, training noise) is
//! keyed by the query itself, which makes it reproducible regardless of call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Well-known stream names.
pub mod streams {
    pub const SPACE_GEN: &str = "space-gen";
    pub const TRAINING: &str = "training";
    pub const SEARCH: &str = "search";
    pub const EVALUATOR_NOISE: &str = "evaluator-noise";
    pub const BASELINE: &str = "baseline";
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive 64-bit key builder.
#[derive(Debug, Clone, Copy)]
pub struct SeedKey(u64);

impl SeedKey {
    pub fn new(seed: u64) -> Self {
        SeedKey(splitmix(seed))
    }

    pub fn word(self, w: u64) -> Self {
        SeedKey(splitmix(self.0 ^ splitmix(w)))
    }

    pub fn bytes(self, bytes: &[u8]) -> Self {
        let mut key = self.word(bytes.len() as u64);
        for chunk in bytes.chunks(8) {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            key = key.word(u64::from_le_bytes(buf));
        }
        key
    }

    pub fn name(self, name: &str) -> Self {
        self.bytes(name.as_bytes())
    }

    pub fn value(self) -> u64 {
        self.0
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

/// The named sub-stream of `seed`.
pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    SeedKey::new(seed).name(name).rng()
}
