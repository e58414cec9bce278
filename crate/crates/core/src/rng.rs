//! Seed derivation. Every random quantity in a run is drawn from a stream
//! keyed by `(base seed, stream, iteration, index)`, so results do not depend
//! on evaluation order or thread count, and a run can resume at any iteration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Data = 1,
    Gumbel = 2,
    Magnitude = 3,
    ValData = 4,
    TeaGumbel = 5,
    Init = 6,
    Task = 7,
    TeaSample = 8,
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, stream: Stream, iteration: u64, index: u64) -> u64 {
    mix(mix(mix(base ^ mix(stream as u64)) ^ iteration) ^ index.wrapping_mul(0xA24B_AED4_963E_E407))
}

pub fn stream_rng(base: u64, stream: Stream, iteration: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream, iteration, index))
}
