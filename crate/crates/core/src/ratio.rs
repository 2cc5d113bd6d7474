//! Exact non-negative rationals and 2-decimal money amounts.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseRatioError {
    #[error("empty number")]
    Empty,
    #[error("invalid number {0:?}")]
    Invalid(String),
    #[error("zero denominator in {0:?}")]
    ZeroDenominator(String),
    #[error("number {0:?} is too large")]
    Overflow(String),
}

/// A non-negative rational `num / den` kept in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ratio {
    num: u64,
    den: u64,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

impl Ratio {
    pub const ZERO: Ratio = Ratio { num: 0, den: 1 };
    pub const ONE: Ratio = Ratio { num: 1, den: 1 };

    /// Panics on a zero denominator.
    pub fn new(num: u64, den: u64) -> Self {
        assert!(den != 0, "zero denominator");
        let g = gcd(num, den).max(1);
        Ratio {
            num: num / g,
            den: den / g,
        }
    }

    pub fn num(self) -> u64 {
        self.num
    }

    pub fn den(self) -> u64 {
        self.den
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn is_zero(self) -> bool {
        self.num == 0
    }

    pub fn is_one(self) -> bool {
        self.num == self.den
    }

    /// `1 - self`, or `None` when `self > 1`.
    pub fn complement(self) -> Option<Ratio> {
        (self.num <= self.den).then(|| Ratio::new(self.den - self.num, self.den))
    }

    /// `floor(value * self)`.
    pub fn mul_floor(self, value: u128) -> u128 {
        value * self.num as u128 / self.den as u128
    }

    /// `value * self` rounded half-up to an integer.
    pub fn mul_round_half_up(self, value: u128) -> u128 {
        (2 * value * self.num as u128 + self.den as u128) / (2 * self.den as u128)
    }
}

impl PartialOrd for Ratio {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ratio {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.num as u128 * other.den as u128).cmp(&(other.num as u128 * self.den as u128))
    }
}

fn parse_decimal(text: &str) -> Result<Ratio, ParseRatioError> {
    let invalid = || ParseRatioError::Invalid(text.to_string());
    let overflow = || ParseRatioError::Overflow(text.to_string());
    let (int_part, frac_part) = match text.split_once('.') {
        Some((i, f)) => (i, f),
        None => (text, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(invalid());
    }
    if !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
        return Err(invalid());
    }
    let scale = 10u64
        .checked_pow(frac_part.len() as u32)
        .ok_or_else(overflow)?;
    let int_val: u64 = if int_part.is_empty() {
        0
    } else {
        int_part.parse().map_err(|_| overflow())?
    };
    let frac_val: u64 = if frac_part.is_empty() {
        0
    } else {
        frac_part.parse().map_err(|_| overflow())?
    };
    let num = int_val
        .checked_mul(scale)
        .and_then(|v| v.checked_add(frac_val))
        .ok_or_else(overflow)?;
    Ok(Ratio::new(num, scale))
}

impl FromStr for Ratio {
    type Err = ParseRatioError;

    /// Accepts decimals (`0.25`, `2`, `.5`) and fractions (`1/4`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() {
            return Err(ParseRatioError::Empty);
        }
        if let Some((n, d)) = s.split_once('/') {
            let n: u64 = n
                .trim()
                .parse()
                .map_err(|_| ParseRatioError::Invalid(s.to_string()))?;
            let d: u64 = d
                .trim()
                .parse()
                .map_err(|_| ParseRatioError::Invalid(s.to_string()))?;
            if d == 0 {
                return Err(ParseRatioError::ZeroDenominator(s.to_string()));
            }
            return Ok(Ratio::new(n, d));
        }
        parse_decimal(s)
    }
}

impl fmt::Display for Ratio {
    /// Terminating decimals print as decimals, everything else as `p/q`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = self.den;
        let (mut twos, mut fives) = (0u32, 0u32);
        while d % 2 == 0 {
            d /= 2;
            twos += 1;
        }
        while d % 5 == 0 {
            d /= 5;
            fives += 1;
        }
        if d != 1 {
            return write!(f, "{}/{}", self.num, self.den);
        }
        let digits = twos.max(fives);
        let scale = 10u128.pow(digits);
        let scaled = self.num as u128 * (scale / self.den as u128);
        let int = scaled / scale;
        let frac = scaled % scale;
        if digits == 0 {
            write!(f, "{int}")
        } else {
            write!(f, "{int}.{frac:0width$}", width = digits as usize)
        }
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// A strictly positive amount with exactly two fractional digits, held as
/// integer minor units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MinorUnits(pub u64);

impl MinorUnits {
    /// Parses `"816.00"`-style text. Exactly two fractional digits are
    /// required.
    pub fn parse_amount(text: &str) -> Option<MinorUnits> {
        let (int, frac) = text.split_once('.')?;
        if int.is_empty()
            || frac.len() != 2
            || !int.bytes().all(|b| b.is_ascii_digit())
            || !frac.bytes().all(|b| b.is_ascii_digit())
        {
            return None;
        }
        let major: u64 = int.parse().ok()?;
        let minor: u64 = frac.parse().ok()?;
        major.checked_mul(100)?.checked_add(minor).map(MinorUnits)
    }
}

impl fmt::Display for MinorUnits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
    }
}
