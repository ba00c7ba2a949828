//! Deterministic random streams.
//!
//! Every trial draws from independent ChaCha20 streams keyed by the master
//! seed. Stream ids are `trial * STRIDE + purpose`, so two purposes never
//! share a stream and adding a purpose does not disturb existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Number of stream ids reserved per trial.
pub const STRIDE: u64 = 8;

/// What a stream is used for inside one trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Purpose {
    /// Shuffle noise `eta`.
    Eta = 0,
    /// Residual noise `gamma`, or the one-shot noise `xi` for baselines.
    Gamma = 1,
    /// Shuffle gains.
    Gains = 2,
    /// Key generation and encryption blinding.
    Crypto = 3,
    /// Random initial states for convergence studies.
    State = 4,
}

/// Stream id reserved for seeded data generation (outside any trial).
pub const DATA_STREAM: u64 = u64::MAX;
/// Stream id reserved for random graph generation.
pub const GRAPH_STREAM: u64 = u64::MAX - 1;

/// Returns the ChaCha20 generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The per-purpose generators of one trial.
#[derive(Clone, Copy, Debug)]
pub struct TrialStreams {
    seed: u64,
    trial: u64,
}

impl TrialStreams {
    pub fn new(seed: u64, trial: u64) -> Self {
        TrialStreams { seed, trial }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn trial(&self) -> u64 {
        self.trial
    }

    pub fn rng(&self, purpose: Purpose) -> ChaCha20Rng {
        stream_rng(self.seed, self.trial.wrapping_mul(STRIDE).wrapping_add(purpose as u64))
    }
}
