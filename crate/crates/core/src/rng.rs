//! Seeded random streams.
//!
//! Every run has one seed. Each consumer of randomness derives its own
//! ChaCha stream from `(seed, purpose, index)` so that changing how one
//! component draws numbers never shifts the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Shuffle,
    Candidates,
    Noise,
    EvalNegatives,
    Init,
    BprNegatives,
    Synthetic,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Shuffle => 0x5348_5546,
            Purpose::Candidates => 0x4341_4e44,
            Purpose::Noise => 0x4e4f_4953,
            Purpose::EvalNegatives => 0x4556_414c,
            Purpose::Init => 0x494e_4954,
            Purpose::BprNegatives => 0x4250_524e,
            Purpose::Synthetic => 0x5359_4e54,
        }
    }
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream for `purpose`, further split by `index` (an epoch, a user, ...).
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> StreamRng {
    let key = mix(mix(mix(seed) ^ purpose.tag()) ^ index);
    ChaCha8Rng::seed_from_u64(key)
}
