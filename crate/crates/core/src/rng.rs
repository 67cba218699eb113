//! Named random streams derived from a single experiment seed.
//!
//! Each stream is a ChaCha20 generator keyed by `SHA-256(seed ‖ name)`, so
//! adding draws to one consumer never shifts the draws seen by another.

use rand_chacha::ChaCha20Rng;
use rand::SeedableRng;
use sha2::{Digest, Sha256};

pub const DEVICE_SHOTS: &str = "device-shots";
pub const SPSA_PERTURBATIONS: &str = "spsa-perturbations";
pub const RESAMPLING: &str = "resampling";
pub const DIFFUSION: &str = "diffusion";
pub const PRIOR: &str = "prior";
pub const SEQUENCES: &str = "sequences";

/// A seeded generator that remembers its stream name.
#[derive(Debug, Clone)]
pub struct NamedStream {
    name: String,
    rng: ChaCha20Rng,
}

impl NamedStream {
    pub fn new(seed: u64, name: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update(name.as_bytes());
        let key: [u8; 32] = hasher.finalize().into();
        Self { name: name.to_owned(), rng: ChaCha20Rng::from_seed(key) }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Number of 32-bit words consumed so far.
    pub fn counter(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }
}

/// All the streams an experiment run draws from.
#[derive(Debug, Clone)]
pub struct StreamSet {
    pub shots: NamedStream,
    pub sequences: NamedStream,
    pub perturbations: NamedStream,
    pub resampling: NamedStream,
    pub diffusion: NamedStream,
    pub prior: NamedStream,
}

impl StreamSet {
    pub fn new(seed: u64) -> Self {
        Self {
            shots: NamedStream::new(seed, DEVICE_SHOTS),
            sequences: NamedStream::new(seed, SEQUENCES),
            perturbations: NamedStream::new(seed, SPSA_PERTURBATIONS),
            resampling: NamedStream::new(seed, RESAMPLING),
            diffusion: NamedStream::new(seed, DIFFUSION),
            prior: NamedStream::new(seed, PRIOR),
        }
    }
}
