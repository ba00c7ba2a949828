//! Exact conversions between `f64` and big integers.
//!
//! The shuffle pipeline works on integers scaled by a fixed-point factor, and
//! the consensus simulator needs to carry those integers next to ordinary
//! floating point states. Every conversion here is exact except where the
//! rounding rule is stated.

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::float::FloatCore;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Rounds `x * scale` to the nearest integer, ties away from zero.
///
/// The product is formed exactly from the binary expansion of `x`, so no
/// precision is lost for large scales or large `x`. Panics on non-finite `x`.
pub fn round_scaled(x: f64, scale: &BigUint) -> BigInt {
    assert!(x.is_finite(), "round_scaled on non-finite value");
    if x == 0.0 {
        return BigInt::zero();
    }
    let (mantissa, exponent, sign) = FloatCore::integer_decode(x);
    let mut magnitude = BigUint::from(mantissa) * scale;
    if exponent >= 0 {
        magnitude <<= exponent as usize;
    } else {
        let shift = (-exponent) as usize;
        let half = BigUint::one() << (shift - 1);
        magnitude = (magnitude + half) >> shift;
    }
    let sign = if sign < 0 { Sign::Minus } else { Sign::Plus };
    BigInt::from_biguint(sign, magnitude)
}

/// Exact rational value of a finite `f64`.
pub fn f64_to_rational(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite float")
}

/// Nearest-ish `f64` of `numerator / denominator` (relative error ~1e-16).
pub fn ratio_to_f64(numerator: &BigInt, denominator: &BigInt) -> f64 {
    if numerator.is_zero() {
        return 0.0;
    }
    let num_bits = numerator.bits() as i64;
    let den_bits = denominator.bits() as i64;
    // Keep ~80 significant bits in the quotient before going to f64.
    let shift = 80 - (num_bits - den_bits);
    let (num, den) = if shift >= 0 {
        (numerator << (shift as usize), denominator.clone())
    } else {
        (numerator.clone(), denominator << ((-shift) as usize))
    };
    let quotient = num.div_floor(&den);
    let q = quotient.to_f64().unwrap_or(f64::NAN);
    libm::ldexp(q, (-shift).clamp(-4000, 4000) as i32)
}

/// `f64` value of an exact rational.
pub fn rational_to_f64(x: &BigRational) -> f64 {
    ratio_to_f64(x.numer(), x.denom())
}

/// Bit length of the largest magnitude in `values`.
pub fn max_bits(values: &[BigInt]) -> u64 {
    values.iter().map(|v| v.abs().bits()).max().unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounds_half_away_from_zero() {
        let one = BigUint::one();
        assert_eq!(round_scaled(2.5, &one), BigInt::from(3));
        assert_eq!(round_scaled(-2.5, &one), BigInt::from(-3));
        assert_eq!(round_scaled(2.49, &one), BigInt::from(2));
        assert_eq!(round_scaled(-0.5, &one), BigInt::from(-1));
    }

    #[test]
    fn scaled_rounding_is_exact_for_huge_inputs() {
        let scale: BigUint = BigUint::one() << 40;
        let x = 1.5e103;
        let exact = f64_to_rational(x) * BigRational::from_integer(BigInt::from(scale.clone()));
        assert!(exact.is_integer());
        assert_eq!(round_scaled(x, &scale), exact.to_integer());
    }

    #[test]
    fn ratio_roundtrips() {
        let n = round_scaled(13.1336, &(BigUint::one() << 70));
        let d = BigInt::one() << 70;
        assert!((ratio_to_f64(&n, &d) - 13.1336).abs() < 1e-14);
        assert_eq!(ratio_to_f64(&BigInt::from(-3), &BigInt::from(4)), -0.75);
        let huge = BigInt::one() << 2000;
        assert_eq!(ratio_to_f64(&huge, &(BigInt::one() << 1990)), 1024.0);
    }
}
