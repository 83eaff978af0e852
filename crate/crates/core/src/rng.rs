//! Seeded random streams.
//!
//! A run owns one seed. Each purpose draws from its own ChaCha8 stream
//! (same key, distinct stream id), so adding draws for one purpose never
//! shifts the numbers another purpose sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Mutation = 2,
    Crossover = 3,
    BoundaryReset = 4,
    Sampling = 5,
}

pub fn stream(seed: u64, purpose: Purpose) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}

/// Per-evaluation stream for stochastic objectives, keyed by job id so
/// noise is independent of dispatch order.
pub fn evaluation_stream(noise_seed: u64, job_id: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    rng.set_stream(job_id);
    rng
}

/// The four streams a DE-style optimizer consumes.
#[derive(Clone, Debug)]
pub struct RngStreams {
    pub init: StreamRng,
    pub mutation: StreamRng,
    pub crossover: StreamRng,
    pub boundary: StreamRng,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        Self {
            init: stream(seed, Purpose::Init),
            mutation: stream(seed, Purpose::Mutation),
            crossover: stream(seed, Purpose::Crossover),
            boundary: stream(seed, Purpose::BoundaryReset),
        }
    }
}
