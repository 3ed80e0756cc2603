//! Keyed random streams. Every draw in a simulation comes from a stream
//! identified by `(seed, case, run, variable)`, so adding a variable or a
//! method never shifts the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fold a sequence of keys into one 64-bit value.
pub fn mix(keys: &[u64]) -> u64 {
    keys.iter().fold(0x6A09_E667_F3BC_C908, |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

/// Independent generator for the given key path.
pub fn stream(keys: &[u64]) -> ChaCha8Rng {
    let a = mix(keys);
    let b = splitmix64(a);
    let c = splitmix64(b);
    let d = splitmix64(c);
    let mut seed = [0u8; 32];
    for (chunk, v) in seed.chunks_mut(8).zip([a, b, c, d]) {
        chunk.copy_from_slice(&v.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}
