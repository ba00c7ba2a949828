//! Differentially private average consensus with distributed shuffling.
//!
//! Agents perturb their data with large Gaussian or Laplace noise, exchange
//! Paillier ciphertexts with their neighbours to build correlated zero-sum
//! offsets, and then run ordinary average consensus on the masked values.
//! The offsets cancel in the network average, so only a small residual noise
//! reaches the limit while every transmitted state remains private.
//!
//! Modules, bottom-up:
//! - [`paillier`]: cryptosystem and fixed-point codec.
//! - [`netgraph`]: weighted graphs, Laplacians and the contraction factor.
//! - [`privacy`]: noise design and privacy-condition checks.
//! - [`simnet`]: synchronous message rounds with transcript capture.
//! - [`dishuf`]: the shuffling protocol and its matrix diagnostics.
//! - [`consensus`]: initialisations, the iteration itself and error metrics.
//! - [`experiments`]: configuration, Monte Carlo trials and sweeps.

pub mod consensus;
pub mod dishuf;
pub mod experiments;
pub mod netgraph;
pub mod noise;
pub mod numeric;
pub mod paillier;
pub mod privacy;
pub mod simnet;
pub mod streams;

pub use consensus::{Arithmetic, ConsensusError, ConsensusRun, StopRule};
pub use dishuf::{run_dishuf, ShuffleBackend, ShuffleConfig, ShuffleError, ShuffleOutcome};
pub use experiments::{ExperimentConfig, ExperimentError, Summary};
pub use netgraph::{GraphError, GraphKind, GraphSpec, WeightedGraph};
pub use paillier::{keygen, Ciphertext, FixedPointCodec, Keypair, PaillierError, PublicKey};
pub use privacy::{Algorithm, NoiseFamily, NoisePlan, PrivacyBudget, PrivacyError};
pub use simnet::{Network, Phase, SimnetError, Transcript};

/// Any error raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Paillier(#[from] PaillierError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Privacy(#[from] PrivacyError),
    #[error(transparent)]
    Simnet(#[from] SimnetError),
    #[error(transparent)]
    Shuffle(#[from] ShuffleError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
