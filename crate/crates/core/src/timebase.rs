//! Exact rational time.
//!
//! Key validity arithmetic and the simulator both need exact comparisons at
//! slot boundaries (`floor`/`ceil` of elapsed-time ratios), so time is kept as
//! an exact rational number of seconds rather than a float. Values parse from
//! decimal-second strings ("2.5", "0.001") and serialize back to decimal.

use num_rational::Ratio;
use num_traits::{Signed, Zero};
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};
use std::str::FromStr;
use thiserror::Error;

/// A signed duration or instant, in seconds, with exact rational arithmetic.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Seconds(Ratio<i128>);

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid decimal seconds {input:?}: {reason}")]
pub struct ParseSecondsError {
    pub input: String,
    pub reason: &'static str,
}

impl Seconds {
    pub const fn zero() -> Self {
        Seconds(Ratio::new_raw(0, 1))
    }

    pub fn from_int(n: i64) -> Self {
        Seconds(Ratio::from_integer(n as i128))
    }

    /// `num/den` seconds. Panics if `den == 0`.
    pub fn new(num: i128, den: i128) -> Self {
        Seconds(Ratio::new(num, den))
    }

    /// Decimal milliseconds-style helper used in tests and scenario builders.
    pub fn millis(n: i64) -> Self {
        Seconds(Ratio::new(n as i128, 1000))
    }

    pub fn ratio(&self) -> Ratio<i128> {
        self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_positive(&self) -> bool {
        self.0.is_positive()
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    /// floor(self / other) as an integer. Panics if `other` is zero.
    pub fn div_floor(&self, other: &Seconds) -> i128 {
        (self.0 / other.0).floor().to_integer()
    }

    /// ceil(self / other) as an integer. Panics if `other` is zero.
    pub fn div_ceil(&self, other: &Seconds) -> i128 {
        (self.0 / other.0).ceil().to_integer()
    }

    pub fn min(self, other: Seconds) -> Seconds {
        if self <= other {
            self
        } else {
            other
        }
    }

    pub fn max(self, other: Seconds) -> Seconds {
        if self >= other {
            self
        } else {
            other
        }
    }

    pub fn abs(self) -> Seconds {
        Seconds(self.0.abs())
    }
}

impl Add for Seconds {
    type Output = Seconds;
    fn add(self, rhs: Seconds) -> Seconds {
        Seconds(self.0 + rhs.0)
    }
}

impl AddAssign for Seconds {
    fn add_assign(&mut self, rhs: Seconds) {
        self.0 += rhs.0;
    }
}

impl Sub for Seconds {
    type Output = Seconds;
    fn sub(self, rhs: Seconds) -> Seconds {
        Seconds(self.0 - rhs.0)
    }
}

impl SubAssign for Seconds {
    fn sub_assign(&mut self, rhs: Seconds) {
        self.0 -= rhs.0;
    }
}

impl Neg for Seconds {
    type Output = Seconds;
    fn neg(self) -> Seconds {
        Seconds(-self.0)
    }
}

impl Mul<i128> for Seconds {
    type Output = Seconds;
    fn mul(self, rhs: i128) -> Seconds {
        Seconds(self.0 * Ratio::from_integer(rhs))
    }
}

impl Mul<u32> for Seconds {
    type Output = Seconds;
    fn mul(self, rhs: u32) -> Seconds {
        self * rhs as i128
    }
}

impl Div<i128> for Seconds {
    type Output = Seconds;
    fn div(self, rhs: i128) -> Seconds {
        Seconds(self.0 / Ratio::from_integer(rhs))
    }
}

/// Exact ratio of two durations.
impl Div for Seconds {
    type Output = Ratio<i128>;
    fn div(self, rhs: Seconds) -> Ratio<i128> {
        self.0 / rhs.0
    }
}

impl Sum for Seconds {
    fn sum<I: Iterator<Item = Seconds>>(iter: I) -> Seconds {
        iter.fold(Seconds::zero(), |a, b| a + b)
    }
}

impl fmt::Display for Seconds {
    /// Exact decimal when the denominator divides a power of ten, otherwise
    /// a `num/den` fraction (still exact, still parseable by [`FromStr`]).
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let num = *self.0.numer();
        let den = *self.0.denom();
        if den == 1 {
            return write!(f, "{num}");
        }
        // Strip factors of 2 and 5; anything left means no finite decimal.
        let (mut d, mut twos, mut fives) = (den, 0u32, 0u32);
        while d % 2 == 0 {
            d /= 2;
            twos += 1;
        }
        while d % 5 == 0 {
            d /= 5;
            fives += 1;
        }
        if d != 1 {
            return write!(f, "{num}/{den}");
        }
        let digits = twos.max(fives);
        // Scale numerator to denominator 10^digits.
        let mut scaled = num;
        for _ in 0..digits.saturating_sub(twos) {
            scaled *= 2;
        }
        for _ in 0..digits.saturating_sub(fives) {
            scaled *= 5;
        }
        let sign = if scaled < 0 { "-" } else { "" };
        let mag = scaled.unsigned_abs();
        let pow10 = 10u128.pow(digits);
        let int = mag / pow10;
        let frac = mag % pow10;
        let mut frac_str = format!("{frac:0width$}", width = digits as usize);
        while frac_str.ends_with('0') {
            frac_str.pop();
        }
        if frac_str.is_empty() {
            write!(f, "{sign}{int}")
        } else {
            write!(f, "{sign}{int}.{frac_str}")
        }
    }
}

impl fmt::Debug for Seconds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}s")
    }
}

impl FromStr for Seconds {
    type Err = ParseSecondsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason| ParseSecondsError {
            input: s.to_owned(),
            reason,
        };
        let t = s.trim();
        if t.is_empty() {
            return Err(err("empty string"));
        }
        if let Some((n, d)) = t.split_once('/') {
            let num: i128 = n.trim().parse().map_err(|_| err("bad fraction numerator"))?;
            let den: i128 = d.trim().parse().map_err(|_| err("bad fraction denominator"))?;
            if den == 0 {
                return Err(err("zero denominator"));
            }
            return Ok(Seconds(Ratio::new(num, den)));
        }
        let (sign, body) = match t.strip_prefix('-') {
            Some(rest) => (-1i128, rest),
            None => (1i128, t.strip_prefix('+').unwrap_or(t)),
        };
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, fr)) => (i, fr),
            None => (body, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(err("no digits"));
        }
        if !int_part.chars().all(|c| c.is_ascii_digit())
            || !frac_part.chars().all(|c| c.is_ascii_digit())
        {
            return Err(err("non-digit character"));
        }
        if frac_part.len() > 27 {
            return Err(err("too many fractional digits"));
        }
        let int_val: i128 = if int_part.is_empty() {
            0
        } else {
            int_part.parse().map_err(|_| err("integer part overflow"))?
        };
        let den = 10i128
            .checked_pow(frac_part.len() as u32)
            .ok_or_else(|| err("fraction overflow"))?;
        let frac_val: i128 = if frac_part.is_empty() {
            0
        } else {
            frac_part.parse().map_err(|_| err("fraction overflow"))?
        };
        let num = int_val
            .checked_mul(den)
            .and_then(|v| v.checked_add(frac_val))
            .ok_or_else(|| err("value overflow"))?;
        Ok(Seconds(Ratio::new(sign * num, den)))
    }
}

impl Serialize for Seconds {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Seconds {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> de::Visitor<'de> for V {
            type Value = Seconds;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("decimal seconds as a string or number")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Seconds, E> {
                v.parse().map_err(E::custom)
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Seconds, E> {
                Ok(Seconds(Ratio::from_integer(v as i128)))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Seconds, E> {
                Ok(Seconds::from_int(v))
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Seconds, E> {
                if !v.is_finite() {
                    return Err(E::custom("non-finite time"));
                }
                // Rust's shortest round-trip float formatting yields the
                // decimal the user wrote in the common cases; parse that.
                format!("{v}").parse().map_err(E::custom)
            }
        }
        deserializer.deserialize_any(V)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_decimal_strings_exactly() {
        assert_eq!("2.5".parse::<Seconds>().unwrap(), Seconds::new(5, 2));
        assert_eq!("0.001".parse::<Seconds>().unwrap(), Seconds::new(1, 1000));
        assert_eq!("60".parse::<Seconds>().unwrap(), Seconds::from_int(60));
        assert_eq!("-1.25".parse::<Seconds>().unwrap(), Seconds::new(-5, 4));
        assert_eq!(".5".parse::<Seconds>().unwrap(), Seconds::new(1, 2));
        assert_eq!("1/3".parse::<Seconds>().unwrap(), Seconds::new(1, 3));
    }

    #[test]
    fn rejects_garbage() {
        assert!("".parse::<Seconds>().is_err());
        assert!("abc".parse::<Seconds>().is_err());
        assert!("1.2.3".parse::<Seconds>().is_err());
        assert!("1/0".parse::<Seconds>().is_err());
    }

    #[test]
    fn displays_finite_decimals() {
        assert_eq!(Seconds::new(5, 2).to_string(), "2.5");
        assert_eq!(Seconds::new(1, 1000).to_string(), "0.001");
        assert_eq!(Seconds::from_int(60).to_string(), "60");
        assert_eq!(Seconds::new(-5, 4).to_string(), "-1.25");
        assert_eq!(Seconds::new(1, 3).to_string(), "1/3");
    }

    #[test]
    fn display_roundtrips_through_parse() {
        let cases = [
            Seconds::new(7, 8),
            Seconds::new(-3, 7),
            Seconds::new(123456, 100000),
            Seconds::zero(),
        ];
        for s in cases {
            assert_eq!(s.to_string().parse::<Seconds>().unwrap(), s);
        }
    }

    #[test]
    fn floor_and_ceil_division() {
        let timeout = Seconds::from_int(60);
        assert_eq!(Seconds::from_int(150).div_floor(&timeout), 2);
        assert_eq!(Seconds::from_int(150).div_ceil(&timeout), 3);
        assert_eq!(Seconds::from_int(120).div_floor(&timeout), 2);
        assert_eq!(Seconds::from_int(120).div_ceil(&timeout), 2);
    }

    #[test]
    fn serde_accepts_numbers_and_strings() {
        let a: Seconds = serde_json::from_str("\"2.5\"").unwrap();
        let b: Seconds = serde_json::from_str("2.5").unwrap();
        let c: Seconds = serde_json::from_str("60").unwrap();
        assert_eq!(a, Seconds::new(5, 2));
        assert_eq!(b, Seconds::new(5, 2));
        assert_eq!(c, Seconds::from_int(60));
        assert_eq!(serde_json::to_string(&a).unwrap(), "\"2.5\"");
    }
}
