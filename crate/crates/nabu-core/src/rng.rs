//! Seed-stream derivation. Every random draw in the pipeline comes from a
//! ChaCha stream keyed by (master seed, label), so independent components
//! (init, per-epoch shuffles, dropout) stay reproducible no matter how many
//! draws each one makes.

use rand_chacha::rand_core::SeedableRng;

pub use rand_chacha::ChaCha8Rng;

/// FNV-1a over a byte string; also used as the checkpoint config fingerprint.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic sub-stream of `seed` named by `label` (plus a numeric slot
/// for per-epoch or per-example streams).
pub fn stream(seed: u64, label: &str, slot: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&fnv1a(label.as_bytes()).to_le_bytes());
    key[16..24].copy_from_slice(&slot.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}
