//! Named random streams derived from one run seed.
//!
//! Each consumer gets its own ChaCha8 stream so that, for example, changing
//! the number of dropout draws does not shift the data shuffle.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stream {
    Data,
    Init,
    Augment,
    Shuffle,
    Dropout,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Data => 1,
            Stream::Init => 2,
            Stream::Augment => 3,
            Stream::Shuffle => 4,
            Stream::Dropout => 5,
        }
    }
}

/// Generator for `stream` under `seed`; ChaCha's 64-bit stream id keeps the
/// sequences disjoint.
pub fn stream(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

/// Generator for item `index` of `stream`, e.g. one generated sample.
pub fn substream(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream.id() << 32 | (index >> 32));
    rng
}
