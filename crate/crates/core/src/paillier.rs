//! Paillier cryptosystem with generator `N + 1` and a signed fixed-point codec.
//!
//! Plaintexts live in `[0, N)`. Signed values use the upper half of the ring,
//! so `-x` is stored as `N - x`. Ciphertexts are residues modulo `N^2` and
//! remember the modulus of the key that produced them.

use std::fmt;
use std::sync::Arc;

use num_bigint::{BigInt, BigUint, RandBigInt, Sign};
use num_integer::Integer;
use num_prime::nt_funcs::is_prime;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numeric::round_scaled;

/// Smallest key size accepted by [`keygen`].
pub const MIN_KEY_BITS: u64 = 16;
/// Key size used when a configuration does not name one.
pub const DEFAULT_KEY_BITS: u64 = 1024;
/// Default fixed-point scale exponent: `C = 2^40`.
pub const DEFAULT_SCALE_LOG2: u32 = 40;

const PRIME_ATTEMPTS: usize = 100_000;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PaillierError {
    #[error("key size {0} bits is below the minimum of {MIN_KEY_BITS}")]
    KeySize(u64),
    #[error("prime search gave up after {0} candidates; retry with a fresh seed")]
    PrimeSearch(usize),
    #[error("plaintext out of range [0, N)")]
    PlaintextRange,
    #[error("ciphertexts were produced under different public keys")]
    ModulusMismatch,
    #[error("homomorphic scalar must be a positive integer")]
    ZeroScalar,
    #[error("ciphertext is not a unit modulo N")]
    Integrity,
    #[error("fixed-point value {value:e} needs {needed_bits} bits but the signed range holds {available_bits}")]
    CodecOverflow {
        value: f64,
        needed_bits: u64,
        available_bits: u64,
    },
    #[error("signed integer needs {needed_bits} bits but the signed range holds {available_bits}")]
    SignedOverflow { needed_bits: u64, available_bits: u64 },
    #[error("invalid key record: {0}")]
    Record(String),
}

struct PublicInner {
    n: BigUint,
    nn: BigUint,
    half_n: BigUint,
}

/// Public key `N` (the generator is always `N + 1`). Cheap to clone.
#[derive(Clone)]
pub struct PublicKey(Arc<PublicInner>);

impl PublicKey {
    pub fn from_modulus(n: BigUint) -> Self {
        let nn = &n * &n;
        let half_n = (&n - 1u32) >> 1;
        PublicKey(Arc::new(PublicInner { n, nn, half_n }))
    }

    pub fn n(&self) -> &BigUint {
        &self.0.n
    }

    pub fn nn(&self) -> &BigUint {
        &self.0.nn
    }

    /// Largest magnitude representable as a signed plaintext, `(N - 1) / 2`.
    pub fn signed_bound(&self) -> &BigUint {
        &self.0.half_n
    }

    pub fn bits(&self) -> u64 {
        self.0.n.bits()
    }

    fn same_key(&self, other: &PublicKey) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0.n == other.0.n
    }

    /// Maps a signed integer onto `[0, N)`, negatives to the upper half.
    pub fn to_residue(&self, v: &BigInt) -> Result<BigUint, PaillierError> {
        let magnitude = v.magnitude();
        if magnitude > self.signed_bound() {
            return Err(PaillierError::SignedOverflow {
                needed_bits: magnitude.bits() + 1,
                available_bits: self.signed_bound().bits() + 1,
            });
        }
        Ok(match v.sign() {
            Sign::Minus => self.n() - magnitude,
            _ => magnitude.clone(),
        })
    }

    /// Inverse of [`PublicKey::to_residue`].
    pub fn from_residue(&self, m: &BigUint) -> BigInt {
        if m > self.signed_bound() {
            -BigInt::from(self.n() - m)
        } else {
            BigInt::from(m.clone())
        }
    }

    /// `(N+1)^m * r^N mod N^2` with a fresh blinding factor `r`.
    pub fn encrypt<R: Rng + ?Sized>(&self, m: &BigUint, rng: &mut R) -> Result<Ciphertext, PaillierError> {
        if m >= self.n() {
            return Err(PaillierError::PlaintextRange);
        }
        let r = loop {
            let r = rng.gen_biguint_range(&BigUint::one(), self.n());
            if r.gcd(self.n()).is_one() {
                break r;
            }
        };
        // (N+1)^m = 1 + m*N (mod N^2)
        let gm = (BigUint::one() + m * self.n()) % self.nn();
        let rn = r.modpow(self.n(), self.nn());
        Ok(Ciphertext {
            value: (gm * rn) % self.nn(),
            key: self.clone(),
        })
    }

    /// Encrypts a signed integer through the upper-half convention.
    pub fn encrypt_signed<R: Rng + ?Sized>(&self, v: &BigInt, rng: &mut R) -> Result<Ciphertext, PaillierError> {
        let m = self.to_residue(v)?;
        self.encrypt(&m, rng)
    }

    /// Homomorphic addition: the product of ciphertexts decrypts to `m1 + m2 mod N`.
    pub fn add(&self, c1: &Ciphertext, c2: &Ciphertext) -> Result<Ciphertext, PaillierError> {
        if !self.same_key(&c1.key) || !self.same_key(&c2.key) {
            return Err(PaillierError::ModulusMismatch);
        }
        Ok(Ciphertext {
            value: (&c1.value * &c2.value) % self.nn(),
            key: self.clone(),
        })
    }

    /// Homomorphic scaling: `c^k` decrypts to `k * m mod N`.
    pub fn scale(&self, c: &Ciphertext, k: &BigUint) -> Result<Ciphertext, PaillierError> {
        if !self.same_key(&c.key) {
            return Err(PaillierError::ModulusMismatch);
        }
        if k.is_zero() {
            return Err(PaillierError::ZeroScalar);
        }
        Ok(Ciphertext {
            value: c.value.modpow(k, self.nn()),
            key: self.clone(),
        })
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PublicKey").field("bits", &self.bits()).finish()
    }
}

impl PartialEq for PublicKey {
    fn eq(&self, other: &Self) -> bool {
        self.same_key(other)
    }
}

impl Eq for PublicKey {}

/// A residue modulo `N^2`, tagged with the key that produced it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ciphertext {
    value: BigUint,
    key: PublicKey,
}

impl Ciphertext {
    pub fn value(&self) -> &BigUint {
        &self.value
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.key
    }

    /// Rebuilds a ciphertext received over the wire.
    pub fn from_parts(value: BigUint, key: PublicKey) -> Self {
        Ciphertext { value, key }
    }
}

/// Paillier key pair. The private half holds `p`, `q`, `phi = (p-1)(q-1)` and
/// `phi^-1 mod N`.
#[derive(Clone)]
pub struct Keypair {
    public: PublicKey,
    p: BigUint,
    q: BigUint,
    phi: BigUint,
    phi_inv: BigUint,
}

impl fmt::Debug for Keypair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Keypair").field("bits", &self.public.bits()).finish_non_exhaustive()
    }
}

/// Text record of a key pair (decimal strings).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyRecord {
    pub n: String,
    pub p: String,
    pub q: String,
}

impl Keypair {
    pub fn from_primes(p: BigUint, q: BigUint) -> Result<Self, PaillierError> {
        if p == q {
            return Err(PaillierError::Record("p and q must differ".into()));
        }
        if !is_prime(&p, None).probably() || !is_prime(&q, None).probably() {
            return Err(PaillierError::Record("p and q must be prime".into()));
        }
        let n = &p * &q;
        let phi = (&p - 1u32) * (&q - 1u32);
        let phi_inv = phi
            .modinv(&n)
            .ok_or_else(|| PaillierError::Record("gcd(N, phi) != 1".into()))?;
        Ok(Keypair {
            public: PublicKey::from_modulus(n),
            p,
            q,
            phi,
            phi_inv,
        })
    }

    pub fn public(&self) -> &PublicKey {
        &self.public
    }

    pub fn primes(&self) -> (&BigUint, &BigUint) {
        (&self.p, &self.q)
    }

    /// `m = L(c^phi mod N^2) * phi^-1 mod N` with `L(u) = (u - 1) / N`.
    pub fn decrypt(&self, c: &Ciphertext) -> Result<BigUint, PaillierError> {
        if !self.public.same_key(&c.key) {
            return Err(PaillierError::ModulusMismatch);
        }
        let n = self.public.n();
        if c.value.is_zero() || c.value >= *self.public.nn() || !c.value.gcd(n).is_one() {
            return Err(PaillierError::Integrity);
        }
        let u = c.value.modpow(&self.phi, self.public.nn());
        let l = (u - 1u32) / n;
        Ok((l * &self.phi_inv) % n)
    }

    pub fn decrypt_signed(&self, c: &Ciphertext) -> Result<BigInt, PaillierError> {
        Ok(self.public.from_residue(&self.decrypt(c)?))
    }

    pub fn to_record(&self) -> KeyRecord {
        KeyRecord {
            n: self.public.n().to_string(),
            p: self.p.to_string(),
            q: self.q.to_string(),
        }
    }

    pub fn from_record(record: &KeyRecord) -> Result<Self, PaillierError> {
        let parse = |s: &str| {
            s.parse::<BigUint>()
                .map_err(|e| PaillierError::Record(e.to_string()))
        };
        let kp = Keypair::from_primes(parse(&record.p)?, parse(&record.q)?)?;
        if kp.public.n() != &parse(&record.n)? {
            return Err(PaillierError::Record("N != p * q".into()));
        }
        Ok(kp)
    }
}

/// Generates a key pair whose modulus has exactly `bits` bits.
///
/// Both primes have their two top bits set so the product never comes up
/// short. Deterministic for a seeded `rng`.
pub fn keygen<R: Rng + ?Sized>(bits: u64, rng: &mut R) -> Result<Keypair, PaillierError> {
    if bits < MIN_KEY_BITS {
        return Err(PaillierError::KeySize(bits));
    }
    let p_bits = bits.div_ceil(2);
    let q_bits = bits - p_bits;
    let p = random_prime(p_bits, rng)?;
    let q = loop {
        let q = random_prime(q_bits, rng)?;
        if q != p {
            break q;
        }
    };
    Keypair::from_primes(p, q)
}

fn random_prime<R: Rng + ?Sized>(bits: u64, rng: &mut R) -> Result<BigUint, PaillierError> {
    let top = (BigUint::one() << (bits - 1)) | (BigUint::one() << (bits - 2));
    for _ in 0..PRIME_ATTEMPTS {
        let candidate = rng.gen_biguint(bits) | &top | BigUint::one();
        if is_prime(&candidate, None).probably() {
            return Ok(candidate);
        }
    }
    Err(PaillierError::PrimeSearch(PRIME_ATTEMPTS))
}

/// Maps reals to integers by a scale `C` (round half away from zero).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointCodec {
    scale: BigUint,
}

impl Default for FixedPointCodec {
    fn default() -> Self {
        FixedPointCodec::with_log2(DEFAULT_SCALE_LOG2)
    }
}

impl FixedPointCodec {
    pub fn new(scale: BigUint) -> Self {
        assert!(!scale.is_zero(), "fixed-point scale must be positive");
        FixedPointCodec { scale }
    }

    pub fn with_log2(bits: u32) -> Self {
        FixedPointCodec::new(BigUint::one() << bits)
    }

    pub fn scale(&self) -> &BigUint {
        &self.scale
    }

    /// `round(x * C)` as a signed integer.
    pub fn quantize(&self, x: f64) -> BigInt {
        round_scaled(x, &self.scale)
    }

    /// Signed integer back to a real: `v / C`.
    pub fn dequantize(&self, v: &BigInt) -> f64 {
        crate::numeric::ratio_to_f64(v, &BigInt::from(self.scale.clone()))
    }

    /// Encodes `x` into the plaintext ring of `key`.
    pub fn encode(&self, x: f64, key: &PublicKey) -> Result<BigUint, PaillierError> {
        if !x.is_finite() {
            return Err(PaillierError::CodecOverflow {
                value: x,
                needed_bits: u64::MAX,
                available_bits: key.signed_bound().bits() + 1,
            });
        }
        let v = self.quantize(x);
        key.to_residue(&v).map_err(|_| PaillierError::CodecOverflow {
            value: x,
            needed_bits: v.abs().bits() + 1,
            available_bits: key.signed_bound().bits() + 1,
        })
    }

    pub fn decode(&self, m: &BigUint, key: &PublicKey) -> f64 {
        self.dequantize(&key.from_residue(m))
    }

    /// Largest |x| the codec accepts under `key`, as a float.
    pub fn max_magnitude(&self, key: &PublicKey) -> f64 {
        let bound = key.signed_bound().to_f64().unwrap_or(f64::INFINITY);
        bound / self.scale.to_f64().unwrap_or(f64::INFINITY)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    #[test]
    fn keygen_sixteen_bits_has_two_distinct_byte_primes() {
        let kp = keygen(16, &mut rng(1)).unwrap();
        let (p, q) = kp.primes();
        assert_ne!(p, q);
        assert_eq!(p.bits(), 8);
        assert_eq!(q.bits(), 8);
        assert_eq!(kp.public().bits(), 16);
        assert_eq!(&(p * q), kp.public().n());
    }

    #[test]
    fn keygen_is_deterministic() {
        let a = keygen(128, &mut rng(9)).unwrap();
        let b = keygen(128, &mut rng(9)).unwrap();
        assert_eq!(a.public().n(), b.public().n());
        let c = keygen(128, &mut rng(10)).unwrap();
        assert_ne!(a.public().n(), c.public().n());
    }

    #[test]
    fn keygen_rejects_tiny_keys() {
        assert_eq!(keygen(8, &mut rng(1)).unwrap_err(), PaillierError::KeySize(8));
    }

    #[test]
    fn roundtrip_512() {
        let mut r = rng(7);
        let kp = keygen(512, &mut r).unwrap();
        let c = kp.public().encrypt(&BigUint::from(42u32), &mut r).unwrap();
        assert_eq!(kp.decrypt(&c).unwrap(), BigUint::from(42u32));
        let zero = kp.public().encrypt(&BigUint::zero(), &mut r).unwrap();
        assert!(kp.decrypt(&zero).unwrap().is_zero());
    }

    #[test]
    fn encryption_is_probabilistic() {
        let mut r = rng(3);
        let kp = keygen(128, &mut r).unwrap();
        let m = BigUint::from(42u32);
        let c1 = kp.public().encrypt(&m, &mut r).unwrap();
        let c2 = kp.public().encrypt(&m, &mut r).unwrap();
        assert_ne!(c1.value(), c2.value());
        assert_eq!(kp.decrypt(&c1).unwrap(), kp.decrypt(&c2).unwrap());
    }

    #[test]
    fn homomorphic_add_and_scale() {
        let mut r = rng(11);
        let kp = keygen(128, &mut r).unwrap();
        let pk = kp.public();
        let e12 = pk.encrypt(&BigUint::from(12u32), &mut r).unwrap();
        let e30 = pk.encrypt(&BigUint::from(30u32), &mut r).unwrap();
        assert_eq!(kp.decrypt(&pk.add(&e12, &e30).unwrap()).unwrap(), BigUint::from(42u32));
        let e7 = pk.encrypt(&BigUint::from(7u32), &mut r).unwrap();
        assert_eq!(kp.decrypt(&pk.scale(&e7, &BigUint::from(6u32)).unwrap()).unwrap(), BigUint::from(42u32));
        assert_eq!(kp.decrypt(&pk.scale(&e7, &BigUint::one()).unwrap()).unwrap(), BigUint::from(7u32));
        let e0 = pk.encrypt(&BigUint::zero(), &mut r).unwrap();
        assert_eq!(kp.decrypt(&pk.add(&e7, &e0).unwrap()).unwrap(), BigUint::from(7u32));
    }

    #[test]
    fn errors() {
        let mut r = rng(5);
        let kp = keygen(64, &mut r).unwrap();
        let other = keygen(64, &mut r).unwrap();
        let pk = kp.public();
        assert_eq!(pk.encrypt(pk.n(), &mut r).unwrap_err(), PaillierError::PlaintextRange);
        let c = pk.encrypt(&BigUint::from(3u32), &mut r).unwrap();
        let d = other.public().encrypt(&BigUint::from(3u32), &mut r).unwrap();
        assert_eq!(pk.add(&c, &d).unwrap_err(), PaillierError::ModulusMismatch);
        assert_eq!(pk.scale(&c, &BigUint::zero()).unwrap_err(), PaillierError::ZeroScalar);
        let bad = Ciphertext::from_parts(kp.primes().0.clone(), pk.clone());
        assert_eq!(kp.decrypt(&bad).unwrap_err(), PaillierError::Integrity);
    }

    #[test]
    fn codec_examples() {
        let mut r = rng(2);
        let kp = keygen(128, &mut r).unwrap();
        let pk = kp.public();
        let codec = FixedPointCodec::with_log2(16);
        assert_eq!(codec.encode(1.5, pk).unwrap(), BigUint::from(98304u32));
        assert_eq!(codec.encode(-1.5, pk).unwrap(), pk.n() - BigUint::from(98304u32));
        assert_eq!(codec.decode(&codec.encode(-1.5, pk).unwrap(), pk), -1.5);

        let fine = FixedPointCodec::with_log2(40);
        let x = 13.1336;
        let back = fine.decode(&fine.encode(x, pk).unwrap(), pk);
        assert!((back - x).abs() <= 2f64.powi(-41));
    }

    #[test]
    fn signed_scaling_and_symmetry() {
        let mut r = rng(4);
        let kp = keygen(128, &mut r).unwrap();
        let pk = kp.public();
        let codec = FixedPointCodec::default();
        let a = pk.encrypt(&codec.encode(5.25, pk).unwrap(), &mut r).unwrap();
        let b = pk.encrypt(&codec.encode(-5.25, pk).unwrap(), &mut r).unwrap();
        let sum = kp.decrypt(&pk.add(&a, &b).unwrap()).unwrap();
        assert_eq!(codec.decode(&sum, pk), 0.0);
        let m = pk.encrypt(&codec.encode(-1.0, pk).unwrap(), &mut r).unwrap();
        let tripled = kp.decrypt(&pk.scale(&m, &BigUint::from(3u32)).unwrap()).unwrap();
        assert_eq!(codec.decode(&tripled, pk), -3.0);
    }

    #[test]
    fn codec_overflow_is_reported() {
        let kp = keygen(64, &mut rng(8)).unwrap();
        let codec = FixedPointCodec::default();
        let limit = codec.max_magnitude(kp.public());
        assert!(codec.encode(limit * 0.5, kp.public()).is_ok());
        assert!(matches!(
            codec.encode(limit * 4.0, kp.public()),
            Err(PaillierError::CodecOverflow { .. })
        ));
        assert!(codec.encode(1e15, kp.public()).is_err());
    }

    #[test]
    fn key_record_roundtrip() {
        let kp = keygen(96, &mut rng(12)).unwrap();
        let rec = kp.to_record();
        let back = Keypair::from_record(&rec).unwrap();
        assert_eq!(back.public().n(), kp.public().n());
        let mut broken = rec.clone();
        broken.n = "15".into();
        assert!(Keypair::from_record(&broken).is_err());
    }
}
