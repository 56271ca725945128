//! Deterministic, collision-resistant RNG stream derivation.
//!
//! Every random draw in an experiment comes from a stream keyed by the master
//! seed and an ordered label path such as `[("grad", frame), ("user", u)]`.
//! Distinct paths give statistically independent streams; the same path
//! always gives the same stream, independent of scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// Derive the stream for `(master_seed, labels)`. Tags are length-prefixed
/// before hashing, so no two distinct paths can collide by concatenation.
pub fn rng_stream(master_seed: u64, labels: &[(&str, u64)]) -> ChaCha12Rng {
    assert!(
        !labels.is_empty(),
        "rng_stream requires a nonempty label path"
    );
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    for (tag, index) in labels {
        hasher.update((tag.len() as u64).to_le_bytes());
        hasher.update(tag.as_bytes());
        hasher.update(index.to_le_bytes());
    }
    let digest: [u8; 32] = hasher.finalize().into();
    ChaCha12Rng::from_seed(digest)
}
