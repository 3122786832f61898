//! Named, independent pseudo-random streams derived from one run seed.
//!
//! Each stream is a ChaCha8 generator keyed by the run seed and a fixed
//! stream id, so drawing from one stream never shifts another. Stream state
//! (seed, stream id, word position) is serializable for bit-exact resume.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Every stream the training stack draws from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stream {
    /// Batch order for labeled and unlabeled loaders.
    Shuffle,
    /// Weak/strong views of loader batches.
    Augment,
    /// CSQueue class selection and queue batch sampling.
    Queue,
    /// Classifier encoder and real head initialization.
    InitClassifier,
    /// Dummy head initialization.
    InitDummy,
    /// Detector initialization.
    InitDetector,
    /// Views of queue-sampled images fed to the detector.
    DetectorAugment,
    /// Benchmark construction.
    Bench,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Shuffle => 1,
            Stream::Augment => 2,
            Stream::Queue => 3,
            Stream::InitClassifier => 4,
            Stream::InitDummy => 5,
            Stream::InitDetector => 6,
            Stream::DetectorAugment => 7,
            Stream::Bench => 8,
        }
    }
}

pub type StreamRng = ChaCha8Rng;

/// Build the generator for `stream` under `seed`.
pub fn stream(seed: u64, stream: Stream) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

/// Independent sub-stream `index` of `stream`, for jobs that may run in
/// any order.
pub fn substream(seed: u64, stream: Stream, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id() | ((index + 1) << 8));
    rng
}

/// Serializable position of a stream generator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Word position as a decimal string (u128 does not fit JSON numbers).
    pub word_pos: String,
}

impl StreamState {
    pub fn capture(rng: &StreamRng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Option<StreamRng> {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().ok()?);
        Some(rng)
    }
}

/// All streams used during training.
#[derive(Clone, Debug)]
pub struct RngStreams {
    pub shuffle: StreamRng,
    pub augment: StreamRng,
    pub queue: StreamRng,
    pub detector_augment: StreamRng,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        Self {
            shuffle: stream(seed, Stream::Shuffle),
            augment: stream(seed, Stream::Augment),
            queue: stream(seed, Stream::Queue),
            detector_augment: stream(seed, Stream::DetectorAugment),
        }
    }

    pub fn capture(&self) -> [StreamState; 4] {
        [
            StreamState::capture(&self.shuffle),
            StreamState::capture(&self.augment),
            StreamState::capture(&self.queue),
            StreamState::capture(&self.detector_augment),
        ]
    }

    pub fn restore(states: &[StreamState]) -> Option<Self> {
        match states {
            [a, b, c, d] => Some(Self {
                shuffle: a.restore()?,
                augment: b.restore()?,
                queue: c.restore()?,
                detector_augment: d.restore()?,
            }),
            _ => None,
        }
    }
}
