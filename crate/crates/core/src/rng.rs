//! Counter-keyed random streams.
//!
//! Every draw is taken from a generator keyed by `(seed, particle, step,
//! lane)`, so results do not depend on the order in which particles or
//! steps are processed.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

/// Independent purposes that may draw at the same `(particle, step)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Lane {
    Noise = 1,
    Control = 2,
    Initial = 3,
    Subsample = 4,
    Validation = 5,
}

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// 64-bit key for one `(seed, particle, step, lane)` cell.
#[inline]
pub fn stream_key(seed: u64, particle: u64, step: u64, lane: Lane) -> u64 {
    const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
    let mut h = mix64(seed.wrapping_add(GOLDEN));
    h = mix64(h ^ particle.wrapping_mul(GOLDEN).wrapping_add(0x632b_e59b_d9b4_e019));
    h = mix64(h ^ step.wrapping_mul(0xd1b5_4a32_d192_ed03).wrapping_add(1));
    mix64(h ^ (lane as u64).wrapping_mul(0xff51_afd7_ed55_8ccd))
}

pub type StreamRng = Xoshiro256PlusPlus;

#[inline]
pub fn stream(seed: u64, particle: u64, step: u64, lane: Lane) -> StreamRng {
    Xoshiro256PlusPlus::seed_from_u64(stream_key(seed, particle, step, lane))
}

/// Seed for a derived sub-run (e.g. one entry of a sweep).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    stream_key(master, index, u64::MAX, Lane::Subsample)
}
