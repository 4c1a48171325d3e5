//! Seed derivation and the SplitMix64 mixing function.
//!
//! Every random stream in the simulator is a `ChaCha8Rng` whose seed is
//! derived from a master seed plus a tuple of stream coordinates (purpose,
//! round, client, ...). Streams therefore never depend on call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 step: add the golden gamma, then apply the finalizer.
#[inline]
pub fn mix(z: u64) -> u64 {
    let mut z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a list of coordinates into one 64-bit seed.
pub fn derive_seed(master: u64, coords: &[u64]) -> u64 {
    coords.iter().fold(mix(master), |s, &c| mix(s ^ mix(c)))
}

/// Stream purposes, kept distinct so independent consumers never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Data = 2,
    Partition = 3,
    Split = 4,
    LocalShuffle = 5,
    Qkd = 6,
    KeyId = 7,
}

pub fn stream_rng(master: u64, stream: Stream, coords: &[u64]) -> ChaCha8Rng {
    let mut all = Vec::with_capacity(coords.len() + 1);
    all.push(stream as u64);
    all.extend_from_slice(coords);
    ChaCha8Rng::seed_from_u64(derive_seed(master, &all))
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
