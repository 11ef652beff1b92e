//! Coefficient fields shared by the symbolic and numeric layers.
//!
//! Exact computations run over `BigRational`; data pipelines run over `f64`.
//! The two never mix implicitly: every container is generic over one
//! [`Scalar`] and conversions are explicit.

use std::fmt::Debug;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub type Rational = BigRational;

pub trait Scalar:
    Clone
    + Debug
    + PartialEq
    + Send
    + Sync
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + 'static
{
    /// True for exact arithmetic; used in diagnostics only.
    const EXACT: bool;

    fn from_rational(q: &Rational) -> Self;
    fn from_i64(v: i64) -> Self;
    fn to_f64(&self) -> f64;
    fn abs_val(&self) -> Self;
    /// Exact division for rationals, floating division otherwise.
    fn div(&self, other: &Self) -> Self;

    fn pow(&self, e: u32) -> Self {
        let mut acc = Self::one();
        let mut base = self.clone();
        let mut e = e;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base.clone();
            }
            base = base.clone() * base;
            e >>= 1;
        }
        acc
    }
}

impl Scalar for Rational {
    const EXACT: bool = true;

    fn from_rational(q: &Rational) -> Self {
        q.clone()
    }
    fn from_i64(v: i64) -> Self {
        Rational::from_integer(BigInt::from(v))
    }
    fn to_f64(&self) -> f64 {
        rational_to_f64(self)
    }
    fn abs_val(&self) -> Self {
        self.abs()
    }
    fn div(&self, other: &Self) -> Self {
        self / other
    }
}

impl Scalar for f64 {
    const EXACT: bool = false;

    fn from_rational(q: &Rational) -> Self {
        rational_to_f64(q)
    }
    fn from_i64(v: i64) -> Self {
        v as f64
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn abs_val(&self) -> Self {
        self.abs()
    }
    fn div(&self, other: &Self) -> Self {
        self / other
    }
}

pub fn rat(num: i64, den: i64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

pub fn int(v: i64) -> Rational {
    Rational::from_integer(BigInt::from(v))
}

pub fn rational_to_f64(q: &Rational) -> f64 {
    match (q.numer().to_f64(), q.denom().to_f64()) {
        (Some(n), Some(d)) if n.is_finite() && d.is_finite() => n / d,
        _ => {
            // Shift both parts down to a representable range.
            let shift = q.numer().bits().max(q.denom().bits()).saturating_sub(1000);
            let n = (q.numer() >> shift).to_f64().unwrap_or(0.0);
            let d = (q.denom() >> shift).to_f64().unwrap_or(1.0);
            n / d
        }
    }
}

/// Exact conversion of a finite float to a rational.
pub fn f64_to_rational(x: f64) -> Rational {
    Rational::from_float(x).unwrap_or_else(Rational::zero)
}

pub fn factorial(n: u32) -> BigInt {
    (1..=n).fold(BigInt::one(), |acc, i| acc * BigInt::from(i))
}

/// SplitMix64 finaliser; sub-seeds are `mix(seed ^ mix(stream + 1))`.
pub fn split_seed(seed: u64, stream: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(seed ^ mix(stream.wrapping_add(1)))
}

pub fn rng_for(seed: u64, stream: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(split_seed(seed, stream))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_roundtrip_through_f64() {
        assert_eq!(rational_to_f64(&rat(1, 4)), 0.25);
        assert_eq!(f64_to_rational(0.375), rat(3, 8));
    }

    #[test]
    fn huge_rationals_convert() {
        let big = Rational::new(BigInt::from(3) << 2000u32, BigInt::from(2) << 2000u32);
        assert!((rational_to_f64(&big) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn pow_matches_repeated_product() {
        assert_eq!(Scalar::pow(&rat(2, 3), 5), rat(32, 243));
        assert_eq!(Scalar::pow(&1.5f64, 0), 1.0);
    }

    #[test]
    fn split_streams_differ() {
        assert_ne!(split_seed(7, 0), split_seed(7, 1));
        assert_eq!(split_seed(7, 3), split_seed(7, 3));
    }
}
