//! Exact rational helpers shared by every module.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::fmt;

/// Arbitrary-precision rational number.
pub type Q = BigRational;

/// Builds `n/d`. Panics when `d == 0`.
pub fn q(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

/// Builds the integer `n` as a rational.
pub fn qi(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

pub fn qu(n: u128) -> Q {
    Q::from_integer(BigInt::from(n))
}

pub fn zero() -> Q {
    Q::zero()
}

pub fn one() -> Q {
    Q::one()
}

/// Error returned when a string is not of the form `p/q` or `p`.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("not a rational `p/q`: {0:?}")]
pub struct ParseRationalError(pub String);

/// Parses `p/q` (with `q > 0`) or a bare integer `p`.
pub fn parse_q(s: &str) -> Result<Q, ParseRationalError> {
    let t = s.trim();
    let err = || ParseRationalError(s.to_string());
    match t.split_once('/') {
        Some((n, d)) => {
            let n: BigInt = n.trim().parse().map_err(|_| err())?;
            let d: BigInt = d.trim().parse().map_err(|_| err())?;
            if !d.is_positive() {
                return Err(err());
            }
            Ok(Q::new(n, d))
        }
        None => {
            let n: BigInt = t.parse().map_err(|_| err())?;
            Ok(Q::from_integer(n))
        }
    }
}

/// Writes a rational as `p/q`, always with an explicit denominator.
pub struct Frac<'a>(pub &'a Q);

impl fmt::Display for Frac<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.0.numer(), self.0.denom())
    }
}

pub fn frac(x: &Q) -> String {
    Frac(x).to_string()
}

/// Lossy conversion for reports and plotting only.
pub fn to_f64(x: &Q) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Smallest integer strictly greater than `x`.
pub fn floor_plus_one(x: &Q) -> BigInt {
    x.floor().to_integer() + 1
}

/// `min(a, b)` by reference.
pub fn qmin(a: &Q, b: &Q) -> Q {
    if a <= b {
        a.clone()
    } else {
        b.clone()
    }
}

pub fn qmax(a: &Q, b: &Q) -> Q {
    if a >= b {
        a.clone()
    } else {
        b.clone()
    }
}

/// Least common multiple of the denominators, handy for integer-unit frames.
pub fn common_denominator<'a>(xs: impl IntoIterator<Item = &'a Q>) -> BigInt {
    xs.into_iter()
        .fold(BigInt::one(), |acc, x| acc.lcm(x.denom()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_forms() {
        assert_eq!(parse_q("1/2").unwrap(), q(1, 2));
        assert_eq!(parse_q(" -3/6 ").unwrap(), q(-1, 2));
        assert_eq!(parse_q("4").unwrap(), qi(4));
        assert!(parse_q("1/0").is_err());
        assert!(parse_q("1/-2").is_err());
        assert!(parse_q("x").is_err());
    }

    #[test]
    fn display_keeps_denominator() {
        assert_eq!(frac(&qi(3)), "3/1");
        assert_eq!(frac(&q(2, 4)), "1/2");
    }

    #[test]
    fn floor_plus_one_is_strict() {
        assert_eq!(floor_plus_one(&qi(17)), BigInt::from(18));
        assert_eq!(floor_plus_one(&q(35, 2)), BigInt::from(18));
    }
}
