//! Counter-based seeding: every random stream is a pure function of the
//! master seed and a small tuple of indices, so results do not depend on how
//! work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags, one per consumer of randomness.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Tag {
    MainResample = 1,
    Coarsened = 2,
    OrderSwap = 3,
    Carryover = 4,
    Fatigue = 5,
    Folds = 6,
    Simulation = 7,
    Positions = 8,
    Auxiliary = 9,
}

/// Resample index reserved for auxiliary null draws used to tune statistics.
pub const AUX_DRAW: u64 = u64::MAX;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash of (seed, tag, a, b).
pub fn stream_seed(seed: u64, tag: Tag, a: u64, b: u64) -> u64 {
    let mut h = splitmix(seed);
    h = splitmix(h ^ tag as u64);
    h = splitmix(h ^ a);
    splitmix(h ^ b)
}

pub fn stream(seed: u64, tag: Tag, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, tag, a, b))
}
