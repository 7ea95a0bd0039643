//! Keyed random streams.
//!
//! Every random draw in the simulator comes from a ChaCha stream whose key is
//! a hash of `(seed, parts...)`, so a draw depends only on its coordinates
//! (round, client, epoch) and never on execution order.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Random stream keyed by a seed and an ordered list of coordinates.
pub fn keyed_rng(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    let mut state = splitmix64(seed);
    for &p in parts {
        state = splitmix64(state ^ splitmix64(p));
    }
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_mut(8).enumerate() {
        state = splitmix64(state.wrapping_add(i as u64));
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Stable 64-bit FNV-1a hash of a string, used to key streams by client id.
pub fn string_key(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Fisher-Yates permutation of `0..n` keyed by `(seed, parts...)`.
pub fn permutation(n: usize, seed: u64, parts: &[u64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut keyed_rng(seed, parts));
    idx
}
