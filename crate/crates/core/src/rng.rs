//! Deterministic random streams.
//!
//! Every consumer of randomness (weight init, batch sampling, exploration
//! noise, dropout, environment resets, saliency scoring) draws from its own
//! named stream so that enabling or disabling one feature never shifts the
//! draws seen by another. Streams are derived from a user seed plus a string
//! tag via FNV-1a, which is stable across platforms and processes.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// splitmix64 finalizer; decorrelates nearby seeds before keying ChaCha.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// A reproducible generator for `(seed, tag)`. Identical inputs yield an
/// identical draw sequence on every platform.
pub fn stream(seed: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed ^ fnv1a(tag.as_bytes())))
}

/// Indexed variant for families of streams (one per episode, per layer, ...).
pub fn substream(seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(
        mix(seed ^ fnv1a(tag.as_bytes())).wrapping_add(index.wrapping_mul(0x9e3779b97f4a7c15)),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_inputs_same_sequence() {
        let a: Vec<f64> = stream(7, "init").sample_iter(rand::distributions::Standard).take(8).collect();
        let b: Vec<f64> = stream(7, "init").sample_iter(rand::distributions::Standard).take(8).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn tags_separate_streams() {
        let a: f64 = stream(7, "init").gen();
        let b: f64 = stream(7, "batch").gen();
        assert_ne!(a, b);
    }

    #[test]
    fn seeds_separate_streams() {
        let a: f64 = stream(0, "init").gen();
        let b: f64 = stream(1, "init").gen();
        assert_ne!(a, b);
    }

    #[test]
    fn substreams_differ_by_index() {
        let a: f64 = substream(3, "episode", 0).gen();
        let b: f64 = substream(3, "episode", 1).gen();
        assert_ne!(a, b);
    }

    #[test]
    fn fnv_is_pinned() {
        // Reference value for the empty string and a known literal; guards
        // against accidental swaps of offset/prime constants.
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }
}
