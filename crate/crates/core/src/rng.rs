//! Deterministic random-stream derivation.
//!
//! Every source of randomness in the crate is a pure function of a root
//! seed, a purpose tag, and up to three stream indices. Nothing holds RNG
//! state across steps, which makes checkpoint resume trivially bit-exact:
//! step `k` draws the same numbers whether or not steps `0..k` ran in the
//! same process.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// FNV-1a over the tag so distinct purposes get disjoint streams.
fn tag_hash(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in tag.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// A ChaCha stream keyed by `(root, tag, a, b, c)`.
pub fn stream(root: u64, tag: &str, a: u64, b: u64, c: u64) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&root.to_le_bytes());
    key[8..16].copy_from_slice(&tag_hash(tag).to_le_bytes());
    key[16..24].copy_from_slice(&a.to_le_bytes());
    key[24..32].copy_from_slice(&b.to_le_bytes());
    let mut rng = ChaCha12Rng::from_seed(key);
    rng.set_stream(c);
    rng
}

/// Convenience: stream with a single index.
pub fn stream1(root: u64, tag: &str, a: u64) -> ChaCha12Rng {
    stream(root, tag, a, 0, 0)
}

/// Worker-pool width: `PERCEIVER_THREADS` caps parallel fan-out.
///
/// Parallelism never changes results (per-item streams, index-ordered
/// merges); the cap only bounds resource use.
pub fn worker_count() -> usize {
    let hw = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    match std::env::var("PERCEIVER_THREADS") {
        Ok(v) => v.parse::<usize>().unwrap_or(hw).clamp(1, 64),
        Err(_) => hw.min(8),
    }
}
