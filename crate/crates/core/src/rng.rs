//! Seed derivation.
//!
//! Every consumer of randomness draws from its own ChaCha stream keyed by the
//! master seed and a fixed stream id, so adding a new consumer never shifts
//! the numbers another one sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Synthetic class means.
    DataModel,
    TrainSamples,
    TestSamples,
    Partition,
    Participation,
    ModelInit,
    /// Per-client minibatch sampling.
    Minibatch(usize),
    /// Theory harness sample ordering.
    Theory,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::DataModel => 1,
            Stream::TrainSamples => 2,
            Stream::TestSamples => 3,
            Stream::Partition => 4,
            Stream::Participation => 5,
            Stream::ModelInit => 6,
            Stream::Theory => 7,
            Stream::Minibatch(k) => (1 << 32) + k as u64,
        }
    }
}

pub fn stream_rng(master_seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream.id());
    rng
}
