//! Seed derivation.
//!
//! Every random decision is drawn from a child stream derived from the master
//! seed by `(tag, counter)`, so results do not depend on the order in which
//! episodes are executed or on how many workers execute them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags. Distinct tags never share a child seed for the same counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Composition = 2,
    EnvReset = 3,
    Skeleton = 4,
    Actions = 5,
    Minibatch = 6,
    Eval = 7,
    Pretrain = 8,
    Uncontrolled = 9,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for `(master, tag, counter)`.
pub fn child_seed(master: u64, tag: Stream, counter: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ (tag as u64)) ^ counter)
}

pub fn stream(master: u64, tag: Stream, counter: u64) -> Rng {
    Rng::seed_from_u64(child_seed(master, tag, counter))
}

pub fn from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
