//! Deterministic random streams.
//!
//! Every Markov chain or device session gets its own generator, seeded from a
//! master seed and a tuple of integer keys. Streams therefore do not depend on
//! which worker runs a cell or in which order cells complete.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type StreamRng = Xoshiro256PlusPlus;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a master seed with a list of keys into one 64-bit seed.
pub fn derive_seed(master: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(splitmix64(master), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn stream(master: u64, keys: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(master, keys))
}
