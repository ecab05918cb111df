//! Integer-nanosecond time.
//!
//! Every engine works on whole nanoseconds. Decimal millisecond text from
//! trace files is converted by digit scaling, so `38.7` becomes exactly
//! `38_700_000` ns with no binary floating point in between.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Sub};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NS_PER_MS: u64 = 1_000_000;
pub const NS_PER_S: u64 = 1_000_000_000;

/// A non-negative duration or instant measured in nanoseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Nanos(pub u64);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecimalError {
    #[error("empty number")]
    Empty,
    #[error("negative value `{0}`")]
    Negative(String),
    #[error("`{0}` is not a decimal number")]
    Malformed(String),
    #[error("`{0}` has more precision than one nanosecond")]
    TooPrecise(String),
    #[error("`{0}` overflows the nanosecond range")]
    Overflow(String),
}

impl Nanos {
    pub const ZERO: Nanos = Nanos(0);

    pub const fn from_ms(ms: u64) -> Self {
        Nanos(ms * NS_PER_MS)
    }

    pub const fn from_secs(s: u64) -> Self {
        Nanos(s * NS_PER_S)
    }

    /// Parses decimal milliseconds (`"38.7"`, `"0"`, `"1e2"` is rejected).
    pub fn parse_ms(text: &str) -> Result<Self, DecimalError> {
        parse_scaled(text, 6).map(Nanos)
    }

    /// Parses decimal seconds.
    pub fn parse_secs(text: &str) -> Result<Self, DecimalError> {
        parse_scaled(text, 9).map(Nanos)
    }

    /// Rounds a floating-point millisecond value to the nearest nanosecond.
    /// Used only for generated data and CLI convenience, never for parsing.
    pub fn from_ms_f64(ms: f64) -> Self {
        Nanos((ms * NS_PER_MS as f64).round().max(0.0) as u64)
    }

    pub fn as_ms_f64(self) -> f64 {
        self.0 as f64 / NS_PER_MS as f64
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / NS_PER_S as f64
    }

    /// Exact decimal milliseconds with trailing zeros removed.
    pub fn to_ms_string(self) -> String {
        format_scaled(self.0, 6)
    }

    /// Exact decimal seconds with trailing zeros removed.
    pub fn to_secs_string(self) -> String {
        format_scaled(self.0, 9)
    }

    pub fn saturating_sub(self, rhs: Nanos) -> Nanos {
        Nanos(self.0.saturating_sub(rhs.0))
    }
}

fn parse_scaled(text: &str, scale: u32) -> Result<u64, DecimalError> {
    let t = text.trim();
    if t.is_empty() {
        return Err(DecimalError::Empty);
    }
    let body = match t.strip_prefix('-') {
        Some(rest) => {
            // "-0" and "-0.000" are still zero
            if rest.chars().all(|c| c == '0' || c == '.') && rest.contains('0') {
                rest
            } else {
                return Err(DecimalError::Negative(t.to_string()));
            }
        }
        None => t.strip_prefix('+').unwrap_or(t),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(DecimalError::Malformed(t.to_string()));
    }
    if !int_part.bytes().all(|b| b.is_ascii_digit()) || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
        return Err(DecimalError::Malformed(t.to_string()));
    }
    let frac_trimmed = frac_part.trim_end_matches('0');
    if frac_trimmed.len() > scale as usize {
        return Err(DecimalError::TooPrecise(t.to_string()));
    }
    let overflow = || DecimalError::Overflow(t.to_string());
    let mut value: u64 = 0;
    for b in int_part.bytes() {
        value = value.checked_mul(10).and_then(|v| v.checked_add(u64::from(b - b'0'))).ok_or_else(overflow)?;
    }
    value = value.checked_mul(10u64.pow(scale)).ok_or_else(overflow)?;
    let mut frac: u64 = 0;
    for b in frac_trimmed.bytes() {
        frac = frac * 10 + u64::from(b - b'0');
    }
    frac *= 10u64.pow(scale - frac_trimmed.len() as u32);
    value.checked_add(frac).ok_or_else(overflow)
}

fn format_scaled(value: u64, scale: u32) -> String {
    let unit = 10u64.pow(scale);
    let int = value / unit;
    let frac = value % unit;
    if frac == 0 {
        return int.to_string();
    }
    let digits = format!("{:0width$}", frac, width = scale as usize);
    format!("{}.{}", int, digits.trim_end_matches('0'))
}

impl fmt::Display for Nanos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.to_ms_string())
    }
}

impl FromStr for Nanos {
    type Err = DecimalError;

    /// Parses decimal milliseconds.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Nanos::parse_ms(s)
    }
}

impl Add for Nanos {
    type Output = Nanos;
    fn add(self, rhs: Nanos) -> Nanos {
        Nanos(self.0 + rhs.0)
    }
}

impl AddAssign for Nanos {
    fn add_assign(&mut self, rhs: Nanos) {
        self.0 += rhs.0;
    }
}

impl Sub for Nanos {
    type Output = Nanos;
    fn sub(self, rhs: Nanos) -> Nanos {
        Nanos(self.0 - rhs.0)
    }
}

impl Sum for Nanos {
    fn sum<I: Iterator<Item = Nanos>>(iter: I) -> Nanos {
        Nanos(iter.map(|n| n.0).sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_table_values_exactly() {
        assert_eq!(Nanos::parse_ms("38.7").unwrap(), Nanos(38_700_000));
        assert_eq!(Nanos::parse_ms("0").unwrap(), Nanos::ZERO);
        assert_eq!(Nanos::parse_ms("39.9").unwrap(), Nanos(39_900_000));
        assert_eq!(Nanos::parse_ms(".5").unwrap(), Nanos(500_000));
        assert_eq!(Nanos::parse_ms("7.").unwrap(), Nanos(7_000_000));
        assert_eq!(Nanos::parse_ms("0.000001").unwrap(), Nanos(1));
        assert_eq!(Nanos::parse_ms("1.2300000").unwrap(), Nanos(1_230_000));
        assert_eq!(Nanos::parse_secs("1.5").unwrap(), Nanos(1_500_000_000));
        assert_eq!(Nanos::parse_ms("-0").unwrap(), Nanos::ZERO);
    }

    #[test]
    fn rejects_bad_text() {
        assert!(matches!(Nanos::parse_ms("-1.2"), Err(DecimalError::Negative(_))));
        assert!(matches!(Nanos::parse_ms("1e3"), Err(DecimalError::Malformed(_))));
        assert!(matches!(Nanos::parse_ms("."), Err(DecimalError::Malformed(_))));
        assert!(matches!(Nanos::parse_ms(""), Err(DecimalError::Empty)));
        assert!(matches!(Nanos::parse_ms("0.0000001"), Err(DecimalError::TooPrecise(_))));
        assert!(matches!(Nanos::parse_ms("99999999999999999999"), Err(DecimalError::Overflow(_))));
    }

    #[test]
    fn formats_without_trailing_zeros() {
        assert_eq!(Nanos(38_700_000).to_ms_string(), "38.7");
        assert_eq!(Nanos(0).to_ms_string(), "0");
        assert_eq!(Nanos(1).to_ms_string(), "0.000001");
        assert_eq!(Nanos::from_secs(32).to_secs_string(), "32");
    }

    proptest! {
        #[test]
        fn ms_text_round_trips(ns in 0u64..10_000_000_000_000) {
            let n = Nanos(ns);
            prop_assert_eq!(Nanos::parse_ms(&n.to_ms_string()).unwrap(), n);
        }

        #[test]
        fn six_decimal_places_are_exact(int in 0u64..100_000, frac in 0u64..1_000_000) {
            let text = format!("{int}.{frac:06}");
            prop_assert_eq!(Nanos::parse_ms(&text).unwrap(), Nanos(int * NS_PER_MS + frac));
        }
    }
}
