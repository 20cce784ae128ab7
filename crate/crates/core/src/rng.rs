//! Seed derivation and per-path random streams.
//!
//! Every path owns a ChaCha8 stream selected by `(seed, path index)`, so the
//! numbers a path sees do not depend on how paths are split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Fixed purpose indices for fanning a master seed out into independent
/// sub-seeds. The numbering is part of the reproducibility contract: never
/// renumber, only append.
pub mod purpose {
    pub const TRAIN_PATHS: u64 = 1;
    pub const VALIDATION_SPLIT: u64 = 2;
    pub const NET_INIT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const EVAL_REPEAT: u64 = 5;
    pub const HEDGING: u64 = 6;
    pub const VALIDATION_PATHS: u64 = 7;
    pub const FRESH_DATA: u64 = 8;
    pub const TIME_SUBSET: u64 = 9;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a sub-seed from `master` for a given purpose and index.
pub fn derive_seed(master: u64, purpose: u64, index: u64) -> u64 {
    let a = splitmix64(master ^ 0x6A09_E667_F3BC_C909);
    let b = splitmix64(a ^ purpose.wrapping_mul(0xA076_1D64_78BD_642F));
    splitmix64(b ^ index.wrapping_mul(0xE703_7ED1_A0B4_28DB))
}

/// Generator for one simulation path.
pub fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

/// General purpose seeded generator.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
