//! Named random substreams derived from one master seed.
//!
//! Every consumer of randomness draws from its own ChaCha stream so that
//! switching e.g. the training variant never perturbs data shuffling or
//! initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Data,
    InitA,
    InitB,
    CoinFlip,
    Dropout,
    Negatives,
    Synthetic,
    Split,
    Sample,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Data => 1,
            Stream::InitA => 2,
            Stream::InitB => 3,
            Stream::CoinFlip => 4,
            Stream::Dropout => 5,
            Stream::Negatives => 6,
            Stream::Synthetic => 7,
            Stream::Split => 8,
            Stream::Sample => 9,
        }
    }
}

pub fn substream(master_seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream.id());
    rng
}

/// Stream indexed by an integer, e.g. one per synthetic session.
pub fn indexed_stream(master_seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed ^ stream.id().wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_independent_and_reproducible() {
        let a: u64 = substream(7, Stream::Data).gen();
        let b: u64 = substream(7, Stream::Data).gen();
        let c: u64 = substream(7, Stream::CoinFlip).gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let d: u64 = indexed_stream(7, Stream::Synthetic, 0).gen();
        let e: u64 = indexed_stream(7, Stream::Synthetic, 1).gen();
        assert_ne!(d, e);
    }
}
