//! Deterministic seed derivation.
//!
//! Every random stream is keyed by `(global seed, round, client, stream)` so
//! that client work can be scheduled in any order, on any number of threads,
//! and still consume exactly the same random numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Named random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Reservoir = 1,
    ModelInit = 2,
    Sampling = 3,
    Inner = 4,
    Outer = 5,
    Partition = 6,
    Synthetic = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(global: u64, round: u64, client: u64, stream: Stream) -> u64 {
    let mut h = splitmix64(global);
    for part in [round, client, stream as u64] {
        h = splitmix64(h ^ part);
    }
    h
}

pub fn rng(global: u64, round: u64, client: u64, stream: Stream) -> Rng {
    Rng::seed_from_u64(derive(global, round, client, stream))
}
