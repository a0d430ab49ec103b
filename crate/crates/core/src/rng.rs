//! Seeded, resumable random streams.
//!
//! Every random decision in the engine is drawn from a [`SeededStream`]:
//! a ChaCha12 generator addressed by `(seed, stream id)`. Distinct stream
//! ids over the same seed yield independent sequences, which lets the
//! campaign keep source sampling, exploration, and oracle draws from
//! perturbing one another. A [`RngCheckpoint`] captures the exact word
//! position of a stream so a snapshot can resume mid-sequence without
//! replaying or skipping a single draw.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Serializable position of a [`SeededStream`].
///
/// `restore` rebuilds the generator at exactly this point; two streams
/// with equal checkpoints produce identical futures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngCheckpoint {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u128,
}

/// A deterministic ChaCha12 stream identified by `(seed, stream id)`.
#[derive(Debug, Clone)]
pub struct SeededStream {
    seed: u64,
    rng: ChaCha12Rng,
}

impl SeededStream {
    /// Opens stream `stream` of the generator family seeded by `seed`,
    /// positioned at the beginning.
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, rng }
    }

    /// Rebuilds a stream at the exact position captured in `checkpoint`.
    pub fn restore(checkpoint: &RngCheckpoint) -> Self {
        let mut stream = Self::new(checkpoint.seed, checkpoint.stream);
        stream.rng.set_word_pos(checkpoint.word_pos);
        stream
    }

    /// Captures the current position.
    pub fn checkpoint(&self) -> RngCheckpoint {
        RngCheckpoint {
            seed: self.seed,
            stream: self.rng.get_stream(),
            word_pos: self.rng.get_word_pos(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The underlying generator; draws advance the checkpointed position.
    pub fn rng(&mut self) -> &mut ChaCha12Rng {
        &mut self.rng
    }
}
