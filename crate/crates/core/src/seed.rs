//! Seed plumbing: one master seed expands into named sub-seeds, and every
//! randomized per-item operation draws from a counter-based stream keyed by
//! `(seed, index)`, so parallel and serial evaluation see identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// SplitMix64 finalizer.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives a sub-seed from a parent seed and a label (FNV-1a over the label).
pub fn derive(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    mix64(seed ^ h)
}

/// Independent generator for item `index` of the stream `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Named sub-seeds recorded in every config echo.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubSeeds {
    pub augmentation: u64,
    pub init: u64,
    pub training: u64,
    pub dropout: u64,
}

impl SubSeeds {
    pub fn from_master(master: u64) -> Self {
        SubSeeds {
            augmentation: derive(master, "augmentation"),
            init: derive(master, "init"),
            training: derive(master, "training"),
            dropout: derive(master, "dropout"),
        }
    }
}
