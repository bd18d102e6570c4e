//! Counter-based random streams.
//!
//! Every sample path draws its noise from its own ChaCha stream whose key is
//! derived from `(seed, stream, iteration, sample)`. Paths are therefore
//! reproducible regardless of execution order or thread count.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Address of a per-sample random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    /// Independent sub-experiment tag (e.g. the two halves of a signed estimate).
    pub stream: u64,
    pub iteration: u64,
    pub sample: u64,
}

impl StreamKey {
    pub fn new(seed: u64, iteration: usize, sample: usize) -> Self {
        Self {
            seed,
            stream: 0,
            iteration: iteration as u64,
            sample: sample as u64,
        }
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    fn key_bytes(&self) -> [u8; 32] {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.stream.to_le_bytes());
        key[16..24].copy_from_slice(&self.iteration.to_le_bytes());
        key[24..32].copy_from_slice(&self.sample.to_le_bytes());
        key
    }
}

/// Source of standard normal variates used to build Brownian increments.
pub trait NoiseSource {
    fn standard_normal(&mut self) -> f64;
}

/// Keyed ChaCha8 stream.
pub struct SampleStream {
    rng: ChaCha8Rng,
}

impl SampleStream {
    pub fn new(key: StreamKey) -> Self {
        Self {
            rng: ChaCha8Rng::from_seed(key.key_bytes()),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

impl NoiseSource for SampleStream {
    fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}

/// Stub that always returns zero; produces noiseless paths.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn standard_normal(&mut self) -> f64 {
        0.0
    }
}

/// Replays a fixed list of standard normal values (cycled when exhausted).
#[derive(Debug, Clone)]
pub struct ReplayNoise {
    values: Vec<f64>,
    cursor: usize,
}

impl ReplayNoise {
    pub fn new(values: Vec<f64>) -> Self {
        assert!(!values.is_empty(), "replay noise needs at least one value");
        Self { values, cursor: 0 }
    }
}

impl NoiseSource for ReplayNoise {
    fn standard_normal(&mut self) -> f64 {
        let v = self.values[self.cursor % self.values.len()];
        self.cursor += 1;
        v
    }
}
