//! Exact rational helpers shared by every module.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

/// Arbitrary precision rational used for values, probabilities and expectations.
pub type Rational = BigRational;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot parse `{0}` as a rational (expected `p/q`, an integer or a decimal)")]
pub struct ParseRationalError(pub String);

/// Builds `num/den` from machine integers. Panics on a zero denominator.
pub fn ratio(num: i64, den: i64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

pub fn int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

/// Parses `p/q`, `n`, or a plain decimal such as `-0.125`.
pub fn parse_rational(text: &str) -> Result<Rational, ParseRationalError> {
    let err = || ParseRationalError(text.to_string());
    let s = text.trim();
    if s.is_empty() {
        return Err(err());
    }
    if let Some((p, q)) = s.split_once('/') {
        let p: BigInt = p.trim().parse().map_err(|_| err())?;
        let q: BigInt = q.trim().parse().map_err(|_| err())?;
        if q.is_zero() {
            return Err(err());
        }
        return Ok(Rational::new(p, q));
    }
    let (negative, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (whole, frac) = body.split_once('.').unwrap_or((body, ""));
    if whole.is_empty() && frac.is_empty() {
        return Err(err());
    }
    if !whole.chars().all(|c| c.is_ascii_digit()) || !frac.chars().all(|c| c.is_ascii_digit()) {
        return Err(err());
    }
    let digits = format!("{whole}{frac}");
    let numer: BigInt = if digits.is_empty() {
        BigInt::zero()
    } else {
        digits.parse().map_err(|_| err())?
    };
    let denom = num_traits::pow(BigInt::from(10u32), frac.len());
    let value = Rational::new(numer, denom);
    Ok(if negative { -value } else { value })
}

/// Lossy conversion used for sampling weights and float reports.
pub fn to_f64(q: &Rational) -> f64 {
    q.to_f64().unwrap_or_else(|| {
        // Huge numerators/denominators: fall back to a scaled division.
        let n = q.numer().to_f64().unwrap_or(f64::NAN);
        let d = q.denom().to_f64().unwrap_or(f64::NAN);
        n / d
    })
}

/// `p/q` text, or the bare integer when the denominator is one.
pub fn fmt_rational(q: &Rational) -> String {
    if q.denom().is_one() {
        q.numer().to_string()
    } else {
        format!("{}/{}", q.numer(), q.denom())
    }
}

pub fn sum<'a, I: IntoIterator<Item = &'a Rational>>(items: I) -> Rational {
    items.into_iter().fold(Rational::zero(), |acc, x| acc + x)
}

pub fn in_unit_interval(q: &Rational) -> bool {
    !q.is_negative() && q <= &Rational::one()
}

/// Harmonic number H_k as an exact rational.
pub fn harmonic(k: u64) -> Rational {
    (1..=k as i64).fold(Rational::zero(), |acc, j| acc + ratio(1, j))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_fractions_integers_and_decimals() {
        assert_eq!(parse_rational("3/4").unwrap(), ratio(3, 4));
        assert_eq!(parse_rational(" 6/8 ").unwrap(), ratio(3, 4));
        assert_eq!(parse_rational("1").unwrap(), int(1));
        assert_eq!(parse_rational("0.25").unwrap(), ratio(1, 4));
        assert_eq!(parse_rational("-0.125").unwrap(), ratio(-1, 8));
        assert_eq!(parse_rational(".5").unwrap(), ratio(1, 2));
        assert_eq!(parse_rational("2.").unwrap(), int(2));
    }

    #[test]
    fn rejects_garbage() {
        for bad in ["", "1/0", "a", "1.2.3", "1e5", "--1", "/3", "."] {
            assert!(parse_rational(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn formatting_round_trips() {
        for q in [ratio(3, 4), int(7), ratio(-5, 12), int(0)] {
            assert_eq!(parse_rational(&fmt_rational(&q)).unwrap(), q);
        }
    }

    #[test]
    fn harmonic_numbers() {
        assert_eq!(harmonic(1), int(1));
        assert_eq!(harmonic(6), ratio(49, 20));
        assert_eq!(harmonic(0), int(0));
    }
}
