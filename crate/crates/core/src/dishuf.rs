//! Distributed shuffling: correlated zero-sum offsets from Paillier exchanges.
//!
//! Every agent masks its data with a large noise `eta_i`, encrypts the negated
//! value under its own key and hands key and ciphertext to its neighbours.
//! A neighbour adds its own value homomorphically, scales the difference by a
//! secret gain and sends it back, so agent `j` learns only
//! `a_{i->j} (dbar_i - dbar_j)` from each neighbour. Weighting those by its
//! own gains gives
//!
//! `Delta_j = sum_i a_{j->i} a_{i->j} (dbar_i - dbar_j)`,
//!
//! which sums to zero over the network. Everything runs on integers scaled
//! by the codec factor `C`, so the zero sum is exact.

use nalgebra::DMatrix;
use num_bigint::{BigInt, BigUint};
use num_integer::Roots;
use num_traits::{Signed, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::netgraph::{sorted_eigenvalues, GraphError};
use crate::numeric::ratio_to_f64;
use crate::paillier::{keygen, Ciphertext, FixedPointCodec, Keypair, PaillierError, PublicKey, DEFAULT_KEY_BITS};
use crate::privacy::{alpha, PrivacyError};
use crate::simnet::{Inbox, Message, Network, Payload, Phase, SimnetError, Transcript};

#[derive(Debug, thiserror::Error)]
pub enum ShuffleError {
    #[error("abar must be at least 2, got {0}")]
    Abar(u64),
    #[error("expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("value {0} is not finite")]
    NonFinite(f64),
    #[error(
        "range error: noisy data up to {magnitude:e} needs {needed_bits}-bit products at scale 2^{scale_bits}, \
         but {key_bits}-bit keys hold {available_bits} signed bits; raise key_bits or lower the scale"
    )]
    Range {
        magnitude: f64,
        needed_bits: u64,
        available_bits: u64,
        key_bits: u64,
        scale_bits: u64,
    },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Paillier(#[from] PaillierError),
    #[error(transparent)]
    Network(#[from] SimnetError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Privacy(#[from] PrivacyError),
}

/// How the shuffle is computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShuffleBackend {
    /// Full protocol: per-agent keys, encrypted exchanges through the network.
    #[default]
    Paillier,
    /// Same gains and integers, closed form, no encryption or messages.
    /// Gives bit-identical offsets to the Paillier backend for equal seeds.
    Plaintext,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShuffleConfig {
    pub abar: u64,
    pub key_bits: u64,
    pub codec: FixedPointCodec,
    pub backend: ShuffleBackend,
}

impl Default for ShuffleConfig {
    fn default() -> Self {
        ShuffleConfig {
            abar: 10_000,
            key_bits: DEFAULT_KEY_BITS,
            codec: FixedPointCodec::default(),
            backend: ShuffleBackend::Paillier,
        }
    }
}

impl ShuffleConfig {
    /// `K = n abar^2 + 1`, so that `zeta = 1 / K`.
    pub fn zeta_denominator(&self, n: usize) -> BigUint {
        BigUint::from(n) * BigUint::from(self.abar) * BigUint::from(self.abar) + 1u32
    }

    pub fn zeta(&self, n: usize) -> f64 {
        1.0 / (n as f64 * (self.abar as f64).powi(2) + 1.0)
    }
}

/// Inclusive gain interval `[ceil(abar / sqrt 2), abar]`.
pub fn gain_range(abar: u64) -> (u64, u64) {
    let sq = u128::from(abar) * u128::from(abar);
    let mut lo = (sq / 2).sqrt();
    while 2 * lo * lo < sq {
        lo += 1;
    }
    (lo as u64, abar)
}

/// Per-agent outgoing gains `a_{i->j}`, aligned with the sorted neighbour list.
pub type Gains = Vec<Vec<(usize, u64)>>;

/// Draws `a_{i->j}` for every directed edge, agents in order, neighbours sorted.
pub fn draw_gains<R: Rng + ?Sized>(network: &Network, abar: u64, rng: &mut R) -> Gains {
    let (lo, hi) = gain_range(abar);
    (0..network.n())
        .map(|i| network.neighbors(i).map(|j| (j, rng.gen_range(lo..=hi))).collect())
        .collect()
}

fn gain(gains: &Gains, i: usize, j: usize) -> u64 {
    gains[i]
        .iter()
        .find(|&&(k, _)| k == j)
        .map(|&(_, a)| a)
        .expect("gain on an existing edge")
}

/// Result of one shuffle.
#[derive(Clone, Debug, PartialEq)]
pub struct ShuffleOutcome {
    pub abar: u64,
    pub scale: BigUint,
    /// `K = n abar^2 + 1`.
    pub zeta_denominator: BigUint,
    /// `dbar_i = d_i + eta_i` in reals.
    pub noisy: Vec<f64>,
    /// `round(C d_i) + round(C eta_i)`.
    pub noisy_int: Vec<BigInt>,
    /// `Delta_i` scaled by `C`; sums to exactly zero.
    pub delta_int: Vec<BigInt>,
    /// `zeta Delta_i = Delta_i / (C K)` in reals.
    pub zeta_delta: Vec<f64>,
    pub gains: Gains,
    /// Shuffle-phase records added by this run (empty without capture).
    pub transcript: Transcript,
}

impl ShuffleOutcome {
    pub fn n(&self) -> usize {
        self.delta_int.len()
    }

    /// `Delta_i` in reals (without the `zeta` factor).
    pub fn delta(&self) -> Vec<f64> {
        let c = BigInt::from(self.scale.clone());
        self.delta_int.iter().map(|d| ratio_to_f64(d, &c)).collect()
    }

    pub fn gain(&self, i: usize, j: usize) -> u64 {
        gain(&self.gains, i, j)
    }
}

/// Runs the shuffle on `data` masked by the pre-drawn noise `eta`.
///
/// `gains_rng` feeds the gains, `crypto_rng` key generation and blinding.
pub fn run_dishuf<R1, R2>(
    network: &mut Network,
    data: &[f64],
    eta: &[f64],
    config: &ShuffleConfig,
    gains_rng: &mut R1,
    crypto_rng: &mut R2,
) -> Result<ShuffleOutcome, ShuffleError>
where
    R1: Rng + ?Sized,
    R2: Rng + ?Sized,
{
    let n = network.n();
    if config.abar < 2 {
        return Err(ShuffleError::Abar(config.abar));
    }
    for v in [data, eta] {
        if v.len() != n {
            return Err(ShuffleError::Length { expected: n, got: v.len() });
        }
        if let Some(&x) = v.iter().find(|x| !x.is_finite()) {
            return Err(ShuffleError::NonFinite(x));
        }
    }
    let codec = &config.codec;
    let noisy_int: Vec<BigInt> = data
        .iter()
        .zip(eta)
        .map(|(&d, &e)| codec.quantize(d) + codec.quantize(e))
        .collect();
    range_check(&noisy_int, data, eta, config)?;

    let gains = draw_gains(network, config.abar, gains_rng);
    let start = network.transcript().len();
    let delta_int = match config.backend {
        ShuffleBackend::Plaintext => closed_form(network, &noisy_int, &gains),
        ShuffleBackend::Paillier => encrypted(network, &noisy_int, &gains, config.key_bits, crypto_rng)?,
    };
    let transcript = Transcript::from_records(network.transcript().records()[start..].to_vec());

    let k = config.zeta_denominator(n);
    let ck = BigInt::from(&k * codec.scale());
    let zeta_delta = delta_int.iter().map(|d| ratio_to_f64(d, &ck)).collect();
    Ok(ShuffleOutcome {
        abar: config.abar,
        scale: codec.scale().clone(),
        zeta_denominator: k,
        noisy: data.iter().zip(eta).map(|(d, e)| d + e).collect(),
        noisy_int,
        delta_int,
        zeta_delta,
        gains,
        transcript,
    })
}

/// Every decrypted value `a (dbar_i - dbar_j)` must fit the signed plaintext
/// range of the smallest admissible modulus (`N >= 2^(bits-1)`).
fn range_check(noisy: &[BigInt], data: &[f64], eta: &[f64], config: &ShuffleConfig) -> Result<(), ShuffleError> {
    let max = noisy.iter().map(|v| v.abs()).max().unwrap_or_default();
    let worst = max * 2u32 * config.abar;
    let available_bits = config.key_bits.saturating_sub(2);
    if worst.bits() > available_bits {
        let magnitude = data
            .iter()
            .zip(eta)
            .map(|(d, e)| (d + e).abs())
            .fold(0.0, f64::max);
        return Err(ShuffleError::Range {
            magnitude,
            needed_bits: worst.bits() + 1,
            available_bits,
            key_bits: config.key_bits,
            scale_bits: config.codec.scale().bits().saturating_sub(1),
        });
    }
    Ok(())
}

fn closed_form(network: &Network, noisy: &[BigInt], gains: &Gains) -> Vec<BigInt> {
    (0..network.n())
        .map(|i| {
            let mut acc = BigInt::zero();
            for &(j, a_ij) in &gains[i] {
                let a_ji = gain(gains, j, i);
                acc += (&noisy[j] - &noisy[i]) * (u128::from(a_ij) * u128::from(a_ji));
            }
            acc
        })
        .collect()
}

fn encrypted<R: Rng + ?Sized>(
    network: &mut Network,
    noisy: &[BigInt],
    gains: &Gains,
    key_bits: u64,
    rng: &mut R,
) -> Result<Vec<BigInt>, ShuffleError> {
    let n = network.n();
    let keys: Vec<Keypair> = (0..n).map(|_| keygen(key_bits, rng)).collect::<Result<_, _>>()?;

    // Round 1: public key and E_i(-dbar_i) to every neighbour.
    let mut round1 = Vec::new();
    for (i, kp) in keys.iter().enumerate() {
        let ct = kp.public().encrypt_signed(&-&noisy[i], rng)?;
        for j in network.neighbors(i).collect::<Vec<_>>() {
            round1.push(Message::new(i, j, Payload::PublicKey(kp.public().clone())));
            round1.push(Message::new(i, j, Payload::Ciphertext(ct.clone())));
        }
    }
    let inbox1 = network.exchange(Phase::Shuffle, round1)?;

    // Steps 3-4: E_j(dbar_i) (+) E_j(-dbar_j), raised to a_{i->j}; sent back.
    let mut round2 = Vec::new();
    for (i, inbox) in inbox1.iter().enumerate() {
        for (j, (pk_j, ct_j)) in pair_up(inbox)? {
            let own = pk_j.encrypt_signed(&noisy[i], rng)?;
            let diff = pk_j.add(&own, &ct_j)?;
            let scaled = pk_j.scale(&diff, &BigUint::from(gain(gains, i, j)))?;
            round2.push(Message::new(i, j, Payload::Ciphertext(scaled)));
        }
    }
    let inbox2 = network.exchange(Phase::Shuffle, round2)?;

    // Steps 5-6: decrypt a_{i->j}(dbar_i - dbar_j) and weight by a_{j->i}.
    let mut delta = Vec::with_capacity(n);
    for (j, inbox) in inbox2.into_iter().enumerate() {
        let mut acc = BigInt::zero();
        for (i, payload) in inbox {
            let Payload::Ciphertext(c) = payload else {
                return Err(ShuffleError::Protocol(format!("agent {j} expected a ciphertext from {i}")));
            };
            let ct = Ciphertext::from_parts(c.value().clone(), keys[j].public().clone());
            let v = keys[j]
                .decrypt_signed(&ct)
                .map_err(|e| ShuffleError::Protocol(format!("agent {j} failed to decrypt from {i}: {e}")))?;
            acc += v * gain(gains, j, i);
        }
        delta.push(acc);
    }
    Ok(delta)
}

/// Groups a round-1 inbox into `(sender, key, ciphertext)`.
fn pair_up(inbox: &Inbox) -> Result<Vec<(usize, (PublicKey, Ciphertext))>, ShuffleError> {
    let mut out: Vec<(usize, (PublicKey, Ciphertext))> = Vec::new();
    let mut pending: Option<(usize, PublicKey)> = None;
    for (from, payload) in inbox {
        match (payload, pending.take()) {
            (Payload::PublicKey(pk), None) => pending = Some((*from, pk.clone())),
            (Payload::Ciphertext(ct), Some((sender, pk))) if sender == *from => {
                out.push((sender, (pk.clone(), Ciphertext::from_parts(ct.value().clone(), pk))));
            }
            _ => return Err(ShuffleError::Protocol(format!("unexpected round-1 message from {from}"))),
        }
    }
    if pending.is_some() {
        return Err(ShuffleError::Protocol("public key without ciphertext".into()));
    }
    Ok(out)
}

/// `A` with `A_ij = -zeta a_{i->j} a_{j->i}` on edges and zero row sums,
/// and `P = I - A`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShuffleWeightMatrix {
    pub zeta: f64,
    pub a: DMatrix<f64>,
    pub p: DMatrix<f64>,
}

impl ShuffleWeightMatrix {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
}

pub fn shuffle_matrix(outcome: &ShuffleOutcome) -> ShuffleWeightMatrix {
    let n = outcome.n();
    let abar = outcome.abar as f64;
    let zeta = 1.0 / (n as f64 * abar * abar + 1.0);
    let mut a = DMatrix::zeros(n, n);
    for (i, row) in outcome.gains.iter().enumerate() {
        for &(j, a_ij) in row {
            let w = zeta * (a_ij as f64) * (outcome.gain(j, i) as f64);
            a[(i, j)] = -w;
            a[(i, i)] += w;
        }
    }
    let p = DMatrix::identity(n, n) - &a;
    ShuffleWeightMatrix { zeta, a, p }
}

/// Spectral check of a shuffle matrix against `1 - alpha`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub eigenvalues: Vec<f64>,
    pub lambda2: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Passes iff `lambda_2(A) >= 1 - alpha` and every eigenvalue is in `[0, 2)`
/// (zero up to `1e-12` of rounding).
pub fn verify_spectrum(matrix: &ShuffleWeightMatrix, abar: u64) -> Result<SpectrumReport, ShuffleError> {
    let n = matrix.n();
    let bound = alpha(n, abar as f64)?.one_minus_alpha;
    let eigenvalues = sorted_eigenvalues(matrix.a.clone())?;
    let lambda2 = eigenvalues[1];
    let in_range = eigenvalues.iter().all(|&l| (-1e-12..2.0).contains(&l));
    Ok(SpectrumReport { pass: in_range && lambda2 >= bound, lambda2, bound, eigenvalues })
}
