//! Scalar abstractions.
//!
//! The stability-cone engine decides wall membership by exact equality, so it
//! is written against [`OrderedField`], an exact ordered field expressed with
//! `num-traits` bounds. Any arbitrary-precision rational type satisfies it;
//! the crate root aliases the default choice as [`crate::Rat`].

use std::fmt::{Debug, Display};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Signed, Zero};

/// An exact ordered field: the scalar type of the cone engine.
///
/// Implementations must be exact (no rounding), because `classify` tests
/// equalities such as `l_S(θ) = 0` literally.
pub trait OrderedField:
    Clone + Debug + Display + Ord + Signed + FromPrimitive + Send + Sync + 'static
{
    /// Builds the exact quotient `num / den`.
    fn ratio(num: i64, den: i64) -> Self {
        Self::from_i64(num).expect("integer embeds into the field")
            / Self::from_i64(den).expect("integer embeds into the field")
    }

    /// Nearest `f64`, used only for reporting and for bridging to numerics.
    fn to_f64_lossy(&self) -> f64;

    /// Denominator of the reduced representation, when the type has one.
    fn denominator_u64(&self) -> Option<u64>;
}

impl OrderedField for BigRational {
    fn to_f64_lossy(&self) -> f64 {
        use num_traits::ToPrimitive;
        let n = self.numer().to_f64().unwrap_or(f64::NAN);
        let d = self.denom().to_f64().unwrap_or(f64::NAN);
        if n.is_finite() && d.is_finite() {
            n / d
        } else {
            // Scale down huge numerators/denominators before dividing.
            let shift = self.numer().bits().max(self.denom().bits()).saturating_sub(60);
            let n = (self.numer() >> shift).to_f64().unwrap_or(0.0);
            let d = (self.denom() >> shift).to_f64().unwrap_or(1.0);
            n / d
        }
    }

    fn denominator_u64(&self) -> Option<u64> {
        use num_traits::ToPrimitive;
        self.denom().to_u64()
    }
}

/// Parses a rational from `"p/q"`, `"p"`, or a decimal string such as `"0.25"`.
pub fn parse_rational(text: &str) -> Option<BigRational> {
    let t = text.trim();
    if let Some((p, q)) = t.split_once('/') {
        let p: BigInt = p.trim().parse().ok()?;
        let q: BigInt = q.trim().parse().ok()?;
        if q.is_zero() {
            return None;
        }
        return Some(BigRational::new(p, q));
    }
    if let Some((int, frac)) = t.split_once('.') {
        let negative = int.trim_start().starts_with('-');
        let int_part: BigInt = if int.is_empty() || int == "-" {
            BigInt::zero()
        } else {
            int.parse().ok()?
        };
        if frac.is_empty() || !frac.chars().all(|c| c.is_ascii_digit()) {
            return None;
        }
        let frac_num: BigInt = frac.parse().ok()?;
        let scale = num_traits::pow(BigInt::from(10u32), frac.len());
        let mag = BigRational::new(frac_num, scale);
        let base = BigRational::from_integer(int_part);
        return Some(if negative { base - mag } else { base + mag });
    }
    let p: BigInt = t.parse().ok()?;
    Some(BigRational::from_integer(p))
}

/// Exact rational closest to a finite `f64` (the binary value itself).
pub fn rational_from_f64(x: f64) -> Option<BigRational> {
    BigRational::from_float(x)
}

/// `n!` as a `u64`, saturating at `u64::MAX`.
pub fn factorial(n: u32) -> u64 {
    (1..=u64::from(n)).fold(1u64, |acc, k| acc.saturating_mul(k))
}

/// Convenience: the exact rational `p/q`.
pub fn rat(p: i64, q: i64) -> BigRational {
    BigRational::new(BigInt::from(p), BigInt::from(q))
}

/// Convenience: the exact integer `n` as a rational.
pub fn int(n: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_fraction_decimal_and_integer() {
        assert_eq!(parse_rational("3/4"), Some(rat(3, 4)));
        assert_eq!(parse_rational("-0.25"), Some(rat(-1, 4)));
        assert_eq!(parse_rational("7"), Some(int(7)));
        assert_eq!(parse_rational("1/0"), None);
        assert_eq!(parse_rational("x"), None);
    }

    #[test]
    fn lossy_conversion_handles_huge_values() {
        let big = BigRational::new(num_traits::pow(BigInt::from(10), 400), num_traits::pow(BigInt::from(10), 399));
        assert!((big.to_f64_lossy() - 10.0).abs() < 1e-9);
        assert_eq!(factorial(4), 24);
    }
}
