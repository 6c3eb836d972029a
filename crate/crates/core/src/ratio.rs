//! Exact non-negative rationals for detector thresholds and window averages.
//!
//! Detector decisions must be bit-reproducible, so thresholds are kept as
//! reduced numerator/denominator pairs and every comparison is done by
//! cross-multiplication in 128-bit integers. No floating point anywhere.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A non-negative rational number, always stored reduced with `den >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ratio {
    num: u64,
    den: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RatioError {
    #[error("empty rational literal")]
    Empty,
    #[error("invalid rational literal `{0}`")]
    Invalid(String),
    #[error("zero denominator in `{0}`")]
    ZeroDenominator(String),
    #[error("rational literal `{0}` out of range")]
    OutOfRange(String),
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

impl Ratio {
    pub const ZERO: Ratio = Ratio { num: 0, den: 1 };

    /// Builds a reduced ratio. Panics if `den == 0`; untrusted input goes
    /// through [`FromStr`] instead.
    pub fn new(num: u64, den: u64) -> Ratio {
        Self::checked_new(num as u128, den as u128).expect("ratio out of range")
    }

    pub fn from_int(n: u64) -> Ratio {
        Ratio { num: n, den: 1 }
    }

    fn checked_new(num: u128, den: u128) -> Option<Ratio> {
        if den == 0 {
            return None;
        }
        let g = if num == 0 { den } else { gcd(num, den) };
        let (num, den) = (num / g, den / g);
        if num > u64::MAX as u128 || den > u64::MAX as u128 {
            return None;
        }
        Some(Ratio {
            num: num as u64,
            den: den as u64,
        })
    }

    pub fn numer(&self) -> u64 {
        self.num
    }

    pub fn denom(&self) -> u64 {
        self.den
    }

    /// `self <= sum / count`, exact. `count` must be nonzero.
    pub fn le_mean(&self, sum: u64, count: u64) -> bool {
        debug_assert!(count > 0);
        // num/den <= sum/count  <=>  num*count <= sum*den
        (self.num as u128) * (count as u128) <= (sum as u128) * (self.den as u128)
    }

    /// `sum / count <= self`, exact. `count` must be nonzero.
    pub fn ge_mean(&self, sum: u64, count: u64) -> bool {
        debug_assert!(count > 0);
        (sum as u128) * (self.den as u128) <= (self.num as u128) * (count as u128)
    }

    pub fn checked_add(self, other: Ratio) -> Option<Ratio> {
        let num = (self.num as u128)
            .checked_mul(other.den as u128)?
            .checked_add((other.num as u128).checked_mul(self.den as u128)?)?;
        Self::checked_new(num, (self.den as u128) * (other.den as u128))
    }

    /// Subtraction clamped at zero.
    pub fn saturating_sub(self, other: Ratio) -> Ratio {
        let left = (self.num as u128) * (other.den as u128);
        let right = (other.num as u128) * (self.den as u128);
        if left <= right {
            return Ratio::ZERO;
        }
        Self::checked_new(left - right, (self.den as u128) * (other.den as u128))
            .expect("ratio subtraction out of range")
    }

    /// Exact decimal rendering when the denominator is of the form 2^a·5^b,
    /// `num/den` otherwise. `Ratio::from_str` accepts both forms.
    pub fn to_display_string(&self) -> String {
        let mut den = self.den;
        let mut pow2 = 0u32;
        let mut pow5 = 0u32;
        while den.is_multiple_of(2) {
            den /= 2;
            pow2 += 1;
        }
        while den.is_multiple_of(5) {
            den /= 5;
            pow5 += 1;
        }
        if den != 1 {
            return format!("{}/{}", self.num, self.den);
        }
        // Scale to 10^max(pow2, pow5).
        let digits = pow2.max(pow5);
        if digits == 0 {
            return format!("{}", self.num);
        }
        let scale: u128 = (2u128.pow(digits - pow2)) * (5u128.pow(digits - pow5));
        let scaled = (self.num as u128) * scale;
        let pow10 = 10u128.pow(digits);
        let int = scaled / pow10;
        let frac = scaled % pow10;
        let frac_str = format!("{:0width$}", frac, width = digits as usize);
        format!("{}.{}", int, frac_str.trim_end_matches('0'))
    }
}

impl PartialOrd for Ratio {
    fn partial_cmp(&self, other: &Ratio) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ratio {
    fn cmp(&self, other: &Ratio) -> Ordering {
        let left = (self.num as u128) * (other.den as u128);
        let right = (other.num as u128) * (self.den as u128);
        left.cmp(&right)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_display_string())
    }
}

impl FromStr for Ratio {
    type Err = RatioError;

    /// Parses `"2.25"`, `"4"`, or `"9/4"` exactly.
    fn from_str(s: &str) -> Result<Ratio, RatioError> {
        let s = s.trim();
        if s.is_empty() {
            return Err(RatioError::Empty);
        }
        let invalid = || RatioError::Invalid(s.to_string());
        if let Some((n, d)) = s.split_once('/') {
            let num: u64 = n.trim().parse().map_err(|_| invalid())?;
            let den: u64 = d.trim().parse().map_err(|_| invalid())?;
            if den == 0 {
                return Err(RatioError::ZeroDenominator(s.to_string()));
            }
            return Self::checked_new(num as u128, den as u128)
                .ok_or_else(|| RatioError::OutOfRange(s.to_string()));
        }
        let (int_part, frac_part) = match s.split_once('.') {
            Some((i, f)) => (i, f),
            None => (s, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(invalid());
        }
        if !int_part.chars().all(|c| c.is_ascii_digit())
            || !frac_part.chars().all(|c| c.is_ascii_digit())
        {
            return Err(invalid());
        }
        if frac_part.len() > 18 {
            return Err(RatioError::OutOfRange(s.to_string()));
        }
        let int: u128 = if int_part.is_empty() {
            0
        } else {
            int_part.parse().map_err(|_| invalid())?
        };
        let frac: u128 = if frac_part.is_empty() {
            0
        } else {
            frac_part.parse().map_err(|_| invalid())?
        };
        let den = 10u128.pow(frac_part.len() as u32);
        let num = int.checked_mul(den).and_then(|v| v.checked_add(frac));
        num.and_then(|n| Self::checked_new(n, den))
            .ok_or_else(|| RatioError::OutOfRange(s.to_string()))
    }
}

impl Serialize for Ratio {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_display_string())
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Ratio, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
