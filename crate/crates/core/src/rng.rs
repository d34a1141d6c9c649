//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8 (`rand_chacha`), seeded
//! with `ChaCha8Rng::seed_from_u64(seed)` and then switched to a fixed stream
//! id per purpose. The same seed therefore yields the same numbers on every
//! platform, and different purposes never share a stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream ids. Changing any of these changes every seeded result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    HeadInit = 1,
    MlpInit = 2,
    LogisticInit = 3,
    SyntheticCenters = 4,
    SyntheticNoise = 5,
    Split = 6,
    Shuffle = 7,
}

pub fn stream(seed: u64, which: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
